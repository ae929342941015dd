#include "htr/tensor.hpp"

#include <cmath>
#include <numeric>

namespace htr {

long numel_of(const Shape& s) {
    long n = 1;
    for (int d : s) {
        if (d < 0) fail("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<long>(v.size()) != numel_of(shape))
        fail("tensor data size " + std::to_string(v.size()) + " does not match shape " + shape_str(shape));
}

Tensor Tensor::full(Shape s, double value) {
    Tensor t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
}

Tensor Tensor::row(std::initializer_list<double> xs) {
    return Tensor({static_cast<int>(xs.size())}, std::vector<double>(xs));
}

bool Tensor::all_finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::l2_norm_sq() const {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return acc;
}

void fail(const std::string& msg) { throw std::runtime_error(msg); }

// splitmix64, used both for seeding and as the generator step
static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng::Rng(uint64_t seed) : state_(seed) {
    // warm up so nearby seeds decorrelate
    splitmix64(state_);
    splitmix64(state_);
}

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(a);
    has_cached_normal_ = true;
    return r * std::cos(a);
}

int Rng::uniform_int(int n) {
    require(n > 0, "uniform_int needs a positive bound");
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

Rng Rng::fork(uint64_t stream_id) const {
    uint64_t s = state_ ^ (0x632be59bd9b4e019ULL * (stream_id + 1));
    return Rng(s);
}

void fill_uniform(Tensor& t, double lo, double hi, Rng& rng) {
    for (double& x : t.v) x = rng.uniform(lo, hi);
}

void fill_normal(Tensor& t, double mean, double stddev, Rng& rng) {
    for (double& x : t.v) x = mean + stddev * rng.normal();
}

void fill_xavier_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
    require(fan_in > 0 && fan_out > 0, "xavier init needs positive fans");
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    fill_uniform(t, -limit, limit, rng);
}

}  // namespace htr
