#pragma once

#include <memory>

#include "htr/decoder.hpp"
#include "htr/encoder.hpp"
#include "htr/loss.hpp"

namespace htr {

struct ModelConfig {
    EncoderConfig encoder;
    AttentionConfig attention;
    DecoderConfig decoder;
    LossConfig loss;
};

// Encoder + attention + decoder sharing one parameter store. The encoder
// head doubles as the CTC logit layer when its width matches the alphabet.
class Seq2SeqModel {
  public:
    Seq2SeqModel(ParamStore& ps, ModelConfig cfg, Alphabet alphabet, uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    const Alphabet& alphabet() const { return alphabet_; }
    const Encoder& encoder() const { return *encoder_; }
    const AttentionModule& attention() const { return *attention_; }
    const Decoder& decoder() const { return *decoder_; }

    // Builds [sos, tokens..., eos] rows from transcripts.
    std::vector<std::vector<int>> target_rows(const std::vector<std::string>& transcripts) const;

    // Inference: transcripts via beam search (width from the decoder config
    // unless overridden). Returns decoded text and optionally the attention
    // matrix (frames x steps) per item.
    struct Recognition {
        std::string text;
        double log_prob = 0.0;
        bool truncated = false;
        std::vector<std::vector<double>> attention_rows;  // per step, length M
    };
    Recognition recognize_one(const Tensor& image_b1, int width, int beam_width) const;

  private:
    ModelConfig cfg_;
    Alphabet alphabet_;
    std::unique_ptr<AttentionModule> attention_;
    std::unique_ptr<Encoder> encoder_;
    std::unique_ptr<Decoder> decoder_;
};

}  // namespace htr
