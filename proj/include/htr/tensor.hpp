#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace htr {

using Shape = std::vector<int>;

long numel_of(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major array of doubles. Values are stored flat; the shape is
// metadata interpreted by the operations.
struct Tensor {
    Shape shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), v(static_cast<size_t>(numel_of(shape)), 0.0) {}
    Tensor(Shape s, std::vector<double> data);

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    static Tensor row(std::initializer_list<double> xs);

    long numel() const { return static_cast<long>(v.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    double& at(int i) { return v[static_cast<size_t>(i)]; }
    double at(int i) const { return v[static_cast<size_t>(i)]; }
    // 2-D accessor, rows x cols
    double& at(int r, int c) { return v[static_cast<size_t>(r) * shape[1] + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
    double l2_norm_sq() const;
};

// Deterministic RNG. Uniform doubles are built from raw engine bits so the
// stream does not depend on the standard library's distribution internals.
class Rng {
  public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);
    double normal();                        // standard normal, Box-Muller
    int uniform_int(int n);                 // [0, n)
    // Independent stream derived from this seed and a stream id.
    Rng fork(uint64_t stream_id) const;

  private:
    uint64_t state_;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

void fill_uniform(Tensor& t, double lo, double hi, Rng& rng);
void fill_normal(Tensor& t, double mean, double stddev, Rng& rng);
// Glorot/Xavier uniform: limit sqrt(6 / (fan_in + fan_out)).
void fill_xavier_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng);

[[noreturn]] void fail(const std::string& msg);

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

}  // namespace htr
