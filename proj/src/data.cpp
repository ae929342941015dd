#include "htr/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "htr/metrics.hpp"

namespace htr {

namespace fs = std::filesystem;

LineSample synth_line(const std::string& text, const SynthSpec& spec, uint64_t seed) {
    require(!text.empty(), "synth_line: empty text");
    auto cps = utf8_decode(text);
    std::string missing;
    for (char32_t c : cps)
        if (!find_glyph(c)) missing += utf8_encode({c});
    require(missing.empty(), "synth_line: no glyph for character(s): " + missing);

    Rng rng(seed);
    int scale = spec.glyph_scale;
    require(scale >= 1, "synth_line: glyph scale must be positive");
    int cell_h = 7 * scale, cell_w = 5 * scale;
    int margin = 2 * scale;
    int canvas_h = cell_h + 2 * margin;

    // layout pass: per-glyph geometry
    struct Placement {
        const GlyphBitmap* glyph;
        int x, y;
        double sx, sy, shear;
    };
    std::vector<Placement> put;
    int pen = margin;
    for (char32_t c : cps) {
        Placement p;
        p.glyph = find_glyph(c);
        p.sx = 1.0 + spec.size_jitter * rng.uniform(-1.0, 1.0);
        p.sy = 1.0 + spec.size_jitter * rng.uniform(-1.0, 1.0);
        p.shear = spec.shear_jitter * rng.uniform(-1.0, 1.0);
        p.x = pen;
        p.y = margin + static_cast<int>(std::lround(spec.baseline_jitter * scale *
                                                    rng.uniform(-1.0, 1.0)));
        put.push_back(p);
        int advance = static_cast<int>(std::lround(cell_w * p.sx)) +
                      static_cast<int>(std::lround(scale * (1.0 + spec.spacing_jitter *
                                                                      rng.uniform(-1.0, 1.0))));
        pen += std::max(advance, scale);
    }
    int canvas_w = pen + margin;

    LineSample out;
    out.transcript = text;
    out.image = Image(canvas_h, canvas_w);
    for (const auto& p : put) {
        int gw = static_cast<int>(std::lround(cell_w * p.sx));
        int gh = static_cast<int>(std::lround(cell_h * p.sy));
        for (int y = 0; y < gh; ++y) {
            double v = y / p.sy;                       // font row coordinate
            int row = static_cast<int>(v / scale);
            if (row < 0 || row >= 7) continue;
            double drift = p.shear * (y - gh / 2.0);   // slant
            for (int x = 0; x < gw; ++x) {
                double u = (x - drift) / p.sx;
                int col = static_cast<int>(u / scale);
                if (u < 0 || col < 0 || col >= 5) continue;
                if (p.glyph->rows[row][col] != '#') continue;
                int cy = p.y + y, cx = p.x + x;
                if (cy >= 0 && cy < canvas_h && cx >= 0 && cx < canvas_w)
                    out.image.at(cy, cx) = 1.0;
            }
        }
    }
    return out;
}

LineSample preprocess(const Image& raw, const std::string& transcript,
                      const std::string& source_id) {
    require(!raw.empty(), "preprocess: empty image");
    std::vector<double> sorted = raw.px;
    std::sort(sorted.begin(), sorted.end());
    auto pct = [&](double q) {
        size_t i = static_cast<size_t>(q * (sorted.size() - 1));
        return sorted[i];
    };
    double lo = pct(0.05), hi = pct(0.95);

    LineSample out;
    out.transcript = transcript;
    out.source_id = source_id;
    int new_w = std::max(1, static_cast<int>(std::lround(raw.w * static_cast<double>(kLineHeight) /
                                                         raw.h)));
    if (hi - lo < 1e-9) {
        out.image = Image(kLineHeight, new_w);  // degenerate contrast: all background
        return out;
    }
    Image norm(raw.h, raw.w);
    for (size_t i = 0; i < raw.px.size(); ++i)
        norm.px[i] = std::clamp((raw.px[i] - lo) / (hi - lo), 0.0, 1.0);
    out.image = resize_bilinear(norm, kLineHeight, new_w);
    return out;
}

Image dilate3x3(const Image& img) {
    Image out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double m = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < img.h && xx >= 0 && xx < img.w)
                        m = std::max(m, img.at(yy, xx));
                }
            out.at(y, x) = m;
        }
    return out;
}

Image erode3x3(const Image& img) {
    Image out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double m = 1.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < img.h && xx >= 0 && xx < img.w)
                        m = std::min(m, img.at(yy, xx));
                }
            out.at(y, x) = m;
        }
    return out;
}

Image grid_distort(const Image& img, Rng& rng, int cell, double jitter) {
    int gy = img.h / cell + 2, gx = img.w / cell + 2;
    std::vector<double> dy(static_cast<size_t>(gy) * gx), dx(dy.size());
    for (size_t i = 0; i < dy.size(); ++i) {
        dy[i] = jitter * rng.normal();
        dx[i] = jitter * rng.normal();
    }
    auto field = [&](const std::vector<double>& d, double y, double x) {
        double fy = y / cell, fx = x / cell;
        int y0 = std::min(static_cast<int>(fy), gy - 2);
        int x0 = std::min(static_cast<int>(fx), gx - 2);
        double wy = fy - y0, wx = fx - x0;
        auto at = [&](int yy, int xx) { return d[static_cast<size_t>(yy) * gx + xx]; };
        return (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
               wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
    };
    Image out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double sy = y + field(dy, y, x);
            double sx = x + field(dx, y, x);
            int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            double wy = sy - y0, wx = sx - x0;
            auto sample = [&](int yy, int xx) {
                yy = std::clamp(yy, 0, img.h - 1);
                xx = std::clamp(xx, 0, img.w - 1);
                return img.at(yy, xx);
            };
            out.at(y, x) = (1 - wy) * ((1 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1)) +
                           wy * ((1 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1));
        }
    return out;
}

LineSample augment(const LineSample& sample, uint64_t seed) {
    Rng rng(seed);
    bool do_dilate = rng.uniform() < 0.5;
    bool do_erode = rng.uniform() < 0.5;
    bool do_grid = rng.uniform() < 0.5;
    LineSample out = sample;
    if (do_dilate) out.image = dilate3x3(out.image);
    if (do_erode) out.image = erode3x3(out.image);
    if (do_grid) out.image = grid_distort(out.image, rng);
    return out;
}

std::vector<Batch> make_batches(const std::vector<LineSample>& samples, const Alphabet& alphabet,
                                const BatchPlan& plan, uint64_t seed) {
    require(!samples.empty(), "make_batches: empty sample set");
    require(plan.batch_size >= 1 && plan.epoch_size >= 1, "make_batches: bad plan");
    Rng rng(seed);

    struct Draw {
        LineSample sample;
        int width;
    };
    std::vector<Draw> draws;
    draws.reserve(static_cast<size_t>(plan.epoch_size));
    for (int i = 0; i < plan.epoch_size; ++i) {
        const LineSample& src = samples[rng.uniform_int(static_cast<int>(samples.size()))];
        Draw d;
        d.sample = plan.augment ? augment(src, rng.next_u64()) : src;
        d.width = d.sample.image.w;
        draws.push_back(std::move(d));
    }

    // width buckets, shuffled within and across
    std::map<int, std::vector<int>> buckets;
    for (size_t i = 0; i < draws.size(); ++i)
        buckets[draws[i].width / plan.width_bucket].push_back(static_cast<int>(i));
    std::vector<int> order;
    order.reserve(draws.size());
    for (auto& [key, idx] : buckets) {
        for (size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.uniform_int(static_cast<int>(i))]);
        order.insert(order.end(), idx.begin(), idx.end());
    }

    std::vector<std::vector<int>> groups;
    for (int at = 0; at < static_cast<int>(order.size()); at += plan.batch_size) {
        int end = std::min<int>(at + plan.batch_size, static_cast<int>(order.size()));
        groups.emplace_back(order.begin() + at, order.begin() + end);
    }
    for (size_t i = groups.size(); i > 1; --i)
        std::swap(groups[i - 1], groups[rng.uniform_int(static_cast<int>(i))]);

    std::vector<Batch> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        std::vector<const LineSample*> members;
        members.reserve(g.size());
        for (int i : g) members.push_back(&draws[i].sample);
        out.push_back(pack_batch(members, alphabet));
    }
    return out;
}

Batch pack_batch(const std::vector<const LineSample*>& samples, const Alphabet& alphabet) {
    require(!samples.empty(), "pack_batch: empty batch");
    int b = static_cast<int>(samples.size());
    int wmax = 0;
    for (const auto* s : samples) {
        require(s->image.h == kLineHeight, "pack_batch: sample height must be 64");
        require(!s->transcript.empty(), "pack_batch: empty transcript");
        wmax = std::max(wmax, s->image.w);
    }
    Batch batch;
    batch.images = Tensor({b, kLineHeight, wmax, 1});
    for (int i = 0; i < b; ++i) {
        const Image& img = samples[i]->image;
        for (int y = 0; y < kLineHeight; ++y)
            for (int x = 0; x < img.w; ++x)
                batch.images.v[((static_cast<size_t>(i) * kLineHeight + y) * wmax + x)] =
                    img.at(y, x);
        batch.widths.push_back(img.w);
        std::vector<int> row;
        row.push_back(alphabet.sos_id());
        for (int id : alphabet.encode(samples[i]->transcript)) row.push_back(id);
        row.push_back(alphabet.eos_id());
        batch.target_lengths.push_back(static_cast<int>(row.size()) - 2);
        batch.target_rows.push_back(std::move(row));
        batch.transcripts.push_back(samples[i]->transcript);
        batch.ids.push_back(samples[i]->source_id);
    }
    return batch;
}

void save_dataset(const std::string& dir, const std::vector<LineSample>& samples) {
    fs::create_directories(fs::path(dir) / "images");
    std::ofstream tsv(fs::path(dir) / "lines.tsv");
    require(tsv.is_open(), "cannot write index in " + dir);
    for (size_t i = 0; i < samples.size(); ++i) {
        std::string id = samples[i].source_id.empty() ? "line" + std::to_string(i)
                                                      : samples[i].source_id;
        std::string rel = "images/" + id + ".pgm";
        write_pgm(samples[i].image, (fs::path(dir) / rel).string());
        require(samples[i].transcript.find('\t') == std::string::npos &&
                    samples[i].transcript.find('\n') == std::string::npos,
                "transcript may not contain tabs or newlines");
        tsv << id << "\t" << rel << "\t" << samples[i].transcript << "\n";
    }
    require(tsv.good(), "short index write in " + dir);
}

std::vector<LineSample> load_dataset(const std::string& dir, bool run_preprocess) {
    std::ifstream tsv(fs::path(dir) / "lines.tsv");
    require(tsv.is_open(), "no lines.tsv in " + dir);
    std::vector<LineSample> out;
    std::string line;
    while (std::getline(tsv, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, rel, transcript;
        std::getline(ls, id, '\t');
        std::getline(ls, rel, '\t');
        std::getline(ls, transcript);
        require(!id.empty() && !rel.empty() && !transcript.empty(),
                "malformed lines.tsv row: " + line);
        Image img = read_pgm((fs::path(dir) / rel).string());
        if (run_preprocess) {
            out.push_back(preprocess(img, transcript, id));
        } else {
            LineSample s;
            s.image = std::move(img);
            s.transcript = transcript;
            s.source_id = id;
            out.push_back(std::move(s));
        }
    }
    require(!out.empty(), "dataset is empty: " + dir);
    return out;
}

}  // namespace htr
