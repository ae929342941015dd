#pragma once

#include <string>
#include <vector>

#include "htr/nn.hpp"

namespace htr {

struct ConvLayerSpec {
    enum class Kind { Conv, Pool };
    Kind kind = Kind::Conv;
    int ky = 1, kx = 1;  // kernel
    int sy = 1, sx = 1;  // stride
    int filters = 0;     // conv only
};

// Layer-spec mini language: conv "C<ky>x<kx>s<sy>x<sx>f<filters>",
// pool "P<ky>x<kx>s<sy>x<sx>", comma separated.
std::vector<ConvLayerSpec> parse_conv_stack(const std::string& spec);
std::string conv_stack_to_string(const std::vector<ConvLayerSpec>& stack);
std::vector<ConvLayerSpec> default_conv_stack();

struct EncoderConfig {
    std::vector<ConvLayerSpec> conv_stack = default_conv_stack();
    int blstm_units = 256;
    int blstm_layers = 3;
    int output_channels = 0;  // CTC-compatible when equal to alphabet size + blank
    double dropout = 0.5;
    int input_height = 64;

    int width_subsampling() const;  // product of width strides
    int conv_out_height() const;
    int conv_out_depth() const;     // channels after the last conv/pool
    int sequence_depth() const { return conv_out_height() * conv_out_depth(); }
    void validate(bool ctc_mode) const;
};

struct EncodedFeatures {
    Var features;               // [B,M,o], zero at padded positions
    std::vector<int> lengths;   // valid frames per item
    bool logit_compatible = false;
    Tensor mask;                // [B,M] 1/0 validity
    int max_frames() const { return mask.ndim() == 2 ? mask.dim(1) : 0; }
};

class Encoder {
  public:
    Encoder(ParamStore& ps, const EncoderConfig& cfg, Rng& rng, bool ctc_mode = true);

    // images: [B,H,W,1] with H == cfg.input_height; widths: unpadded widths.
    EncodedFeatures encode(Tape& t, const Tensor& images, const std::vector<int>& widths,
                           bool train, Rng& rng) const;

    const EncoderConfig& config() const { return cfg_; }

  private:
    EncoderConfig cfg_;
    bool ctc_mode_;
    std::vector<Parameter*> conv_kernels_;
    std::vector<Parameter*> conv_biases_;
    std::vector<Blstm> blstms_;
    Dense projection_;
};

// Per-frame argmax over valid frames, collapse repeats, drop blanks.
// Returns character channel indices per item. blank = last channel.
std::vector<std::vector<int>> greedy_ctc_output(const Tape& t, const EncodedFeatures& enc);

}  // namespace htr
