#include "htr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace htr {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

std::vector<ConvLayerSpec> parse_conv_stack(const std::string& spec) {
    std::vector<ConvLayerSpec> out;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        // strip spaces
        tok.erase(std::remove_if(tok.begin(), tok.end(), [](char c) { return c == ' '; }), tok.end());
        if (tok.empty()) continue;
        ConvLayerSpec layer;
        char kind = tok[0];
        require(kind == 'C' || kind == 'P', "conv stack: layer must start with C or P: " + tok);
        layer.kind = kind == 'C' ? ConvLayerSpec::Kind::Conv : ConvLayerSpec::Kind::Pool;
        int ky, kx, sy, sx, f = 0;
        int n = 0;
        if (kind == 'C')
            n = std::sscanf(tok.c_str() + 1, "%dx%ds%dx%df%d", &ky, &kx, &sy, &sx, &f);
        else
            n = std::sscanf(tok.c_str() + 1, "%dx%ds%dx%d", &ky, &kx, &sy, &sx);
        require((kind == 'C' && n == 5) || (kind == 'P' && n == 4),
                "conv stack: cannot parse layer spec: " + tok);
        layer.ky = ky;
        layer.kx = kx;
        layer.sy = sy;
        layer.sx = sx;
        layer.filters = f;
        require(layer.ky > 0 && layer.kx > 0 && layer.sy > 0 && layer.sx > 0,
                "conv stack: kernel and strides must be positive: " + tok);
        require(kind != 'C' || f > 0, "conv stack: conv layer needs filters: " + tok);
        out.push_back(layer);
    }
    require(!out.empty(), "conv stack: empty spec");
    return out;
}

std::string conv_stack_to_string(const std::vector<ConvLayerSpec>& stack) {
    std::string out;
    for (const auto& l : stack) {
        if (!out.empty()) out += ",";
        std::ostringstream os;
        if (l.kind == ConvLayerSpec::Kind::Conv)
            os << "C" << l.ky << "x" << l.kx << "s" << l.sy << "x" << l.sx << "f" << l.filters;
        else
            os << "P" << l.ky << "x" << l.kx << "s" << l.sy << "x" << l.sx;
        out += os.str();
    }
    return out;
}

std::vector<ConvLayerSpec> default_conv_stack() {
    return parse_conv_stack("C6x4s4x2f8,C6x4s1x1f32,P4x2s4x2,C3x3s1x1f64,P1x2s1x2");
}

int EncoderConfig::width_subsampling() const {
    int f = 1;
    for (const auto& l : conv_stack) f *= l.sx;
    return f;
}

int EncoderConfig::conv_out_height() const {
    int h = input_height;
    for (const auto& l : conv_stack) h = ceil_div(h, l.sy);
    return h;
}

int EncoderConfig::conv_out_depth() const {
    int d = 1;
    for (const auto& l : conv_stack)
        if (l.kind == ConvLayerSpec::Kind::Conv) d = l.filters;
    return d;
}

void EncoderConfig::validate(bool ctc_mode) const {
    require(!conv_stack.empty(), "encoder: empty conv stack");
    require(input_height > 0, "encoder: input height must be positive");
    require(blstm_units > 0 && blstm_layers > 0, "encoder: BLSTM shape must be positive");
    require(dropout >= 0.0 && dropout < 1.0, "encoder: dropout must lie in [0,1)");
    require(output_channels >= (ctc_mode ? 2 : 1),
            "encoder: output channels must cover at least one character plus blank");
    require(conv_out_height() >= 1, "encoder: conv stack collapses the height to zero");
}

Encoder::Encoder(ParamStore& ps, const EncoderConfig& cfg, Rng& rng, bool ctc_mode)
    : cfg_(cfg), ctc_mode_(ctc_mode) {
    cfg_.validate(ctc_mode);
    int cin = 1;
    int conv_idx = 0;
    for (const auto& l : cfg_.conv_stack) {
        if (l.kind != ConvLayerSpec::Kind::Conv) continue;
        Tensor k({l.ky, l.kx, cin, l.filters});
        int fan_in = l.ky * l.kx * cin;
        int fan_out = l.ky * l.kx * l.filters;
        fill_xavier_uniform(k, fan_in, fan_out, rng);
        std::string prefix = "encoder/conv" + std::to_string(conv_idx++);
        conv_kernels_.push_back(&ps.create(prefix + "/k", std::move(k)));
        conv_biases_.push_back(&ps.create(prefix + "/b", Tensor({l.filters})));
        cin = l.filters;
    }
    int in_dim = cfg_.sequence_depth();
    for (int i = 0; i < cfg_.blstm_layers; ++i) {
        blstms_.emplace_back(ps, "encoder/blstm" + std::to_string(i), in_dim, cfg_.blstm_units, rng);
        in_dim = cfg_.blstm_units;
    }
    projection_ = Dense(ps, "encoder/proj", cfg_.blstm_units, cfg_.output_channels, rng);
}

EncodedFeatures Encoder::encode(Tape& t, const Tensor& images, const std::vector<int>& widths,
                                bool train, Rng& rng) const {
    require(images.ndim() == 4 && images.dim(3) == 1,
            "encode expects [B,H,W,1] images, got " + shape_str(images.shape));
    require(images.dim(1) == cfg_.input_height,
            "encode: image height must be exactly " + std::to_string(cfg_.input_height) + ", got " +
                std::to_string(images.dim(1)));
    int b = images.dim(0), w = images.dim(2);
    require(static_cast<int>(widths.size()) == b, "encode: widths size mismatch");
    for (int wi : widths) require(wi >= 1 && wi <= w, "encode: item width out of range");

    auto width_mask = [&](int cur_w, const std::vector<int>& lens) {
        Tensor mask({b, cur_w});
        for (int i = 0; i < b; ++i)
            for (int x = 0; x < lens[i]; ++x) mask.at(i, x) = 1.0;
        return mask;
    };

    std::vector<int> lens = widths;
    Var x = t.input(images);
    x = scale_width(t, x, width_mask(w, lens));
    int cur_w = w;
    size_t conv_idx = 0;
    for (const auto& l : cfg_.conv_stack) {
        if (l.kind == ConvLayerSpec::Kind::Conv) {
            Var k = t.param(*conv_kernels_[conv_idx]);
            Var bias = t.param(*conv_biases_[conv_idx]);
            ++conv_idx;
            x = conv2d(t, x, k, bias, l.sy, l.sx);
            x = leaky_relu(t, x, 0.01);
        } else {
            x = maxpool2d(t, x, l.ky, l.kx, l.sy, l.sx);
        }
        cur_w = ceil_div(cur_w, l.sx);
        for (auto& li : lens) li = ceil_div(li, l.sx);
        x = scale_width(t, x, width_mask(cur_w, lens));
    }

    Var seq = columns_to_sequence(t, x);  // [B,M,height*channels]
    for (const auto& layer : blstms_) {
        seq = layer.apply(t, seq, lens);
        seq = dropout(t, seq, cfg_.dropout, train, rng);
    }
    Var feats = projection_.apply_seq(t, seq);

    EncodedFeatures enc;
    enc.mask = width_mask(cur_w, lens);
    enc.features = scale_time(t, feats, enc.mask);
    enc.lengths = lens;
    enc.logit_compatible = ctc_mode_;
    return enc;
}

std::vector<std::vector<int>> greedy_ctc_output(const Tape& t, const EncodedFeatures& enc) {
    require(enc.logit_compatible,
            "greedy CTC output requires a logit-compatible encoder head");
    const Tensor& f = t.val(enc.features);
    int b = f.dim(0), m = f.dim(1), k = f.dim(2);
    int blank = k - 1;
    std::vector<std::vector<int>> out(b);
    for (int i = 0; i < b; ++i) {
        int prev = -1;
        for (int s = 0; s < std::min(enc.lengths[i], m); ++s) {
            const double* row = &f.v[(static_cast<size_t>(i) * m + s) * k];
            int best = 0;
            for (int c = 1; c < k; ++c)
                if (row[c] > row[best]) best = c;
            if (best != prev && best != blank) out[i].push_back(best);
            prev = best;
        }
    }
    return out;
}

}  // namespace htr
