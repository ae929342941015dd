#pragma once

#include <string>
#include <vector>

#include "htr/alphabet.hpp"
#include "htr/image.hpp"
#include "htr/tensor.hpp"

namespace htr {

struct GlyphBitmap {
    const char* rows[7];  // 5 columns each, '#' = ink
};
const GlyphBitmap* find_glyph(char32_t c);
std::string drawable_characters();

// A text line: image in [0,1] with ink = 1, plus its transcript.
struct LineSample {
    Image image;
    std::string transcript;
    std::string source_id;
};

struct SynthSpec {
    int glyph_scale = 3;           // pixels per font cell
    double baseline_jitter = 0.6;  // fraction of a glyph cell
    double spacing_jitter = 0.6;
    double size_jitter = 0.12;     // per-glyph scale perturbation
    double shear_jitter = 0.18;
};

// Deterministic synthetic writer. Throws if the text is empty or contains a
// character without a glyph.
LineSample synth_line(const std::string& text, const SynthSpec& spec, uint64_t seed);

// Contrast normalization (5th/95th percentile to 0/1, clamped) and bilinear
// scaling to height 64 with the aspect ratio preserved. A constant image
// comes out as all background.
LineSample preprocess(const Image& raw, const std::string& transcript = "",
                      const std::string& source_id = "");
constexpr int kLineHeight = 64;

// Each of dilation (3x3), erosion (3x3) and a grid distortion is applied
// independently with probability one half.
LineSample augment(const LineSample& sample, uint64_t seed);

Image dilate3x3(const Image& img);
Image erode3x3(const Image& img);
Image grid_distort(const Image& img, Rng& rng, int cell = 32, double jitter = 2.0);

struct Batch {
    Tensor images;  // [B,64,Wmax,1], padded with background
    std::vector<int> widths;
    std::vector<std::vector<int>> target_rows;  // sos ... eos (unpadded rows)
    std::vector<int> target_lengths;            // characters per item
    std::vector<std::string> transcripts;
    std::vector<std::string> ids;
    int size() const { return static_cast<int>(widths.size()); }
};

struct BatchPlan {
    int batch_size = 16;
    int epoch_size = 8192;
    bool augment = true;
    int width_bucket = 64;
};

// One epoch of batches: draws epoch_size samples uniformly with replacement,
// augments, encodes labels, pads, and groups by similar width.
std::vector<Batch> make_batches(const std::vector<LineSample>& samples, const Alphabet& alphabet,
                                const BatchPlan& plan, uint64_t seed);

// Packs specific samples in order (evaluation path).
Batch pack_batch(const std::vector<const LineSample*>& samples, const Alphabet& alphabet);

// Dataset directory layout: images/<id>.pgm plus an index file lines.tsv
// with columns id, relative path, transcript.
void save_dataset(const std::string& dir, const std::vector<LineSample>& samples);
std::vector<LineSample> load_dataset(const std::string& dir, bool run_preprocess = true);

}  // namespace htr
