#include "htr/seq2seq.hpp"

namespace htr {

Seq2SeqModel::Seq2SeqModel(ParamStore& ps, ModelConfig cfg, Alphabet alphabet, uint64_t init_seed)
    : cfg_(std::move(cfg)), alphabet_(std::move(alphabet)) {
    Rng rng(init_seed);
    if (cfg_.encoder.output_channels == 0)
        cfg_.encoder.output_channels = alphabet_.ctc_channels();
    bool ctc_mode = cfg_.encoder.output_channels == alphabet_.ctc_channels();
    require(!cfg_.loss.ctc_enabled || ctc_mode,
            "CTC loss needs the encoder head to match the alphabet plus blank");
    cfg_.loss.validate();
    encoder_ = std::make_unique<Encoder>(ps, cfg_.encoder, rng, ctc_mode);
    attention_ = std::make_unique<AttentionModule>(ps, cfg_.attention, cfg_.decoder.hidden_units,
                                                   cfg_.encoder.output_channels, rng);
    decoder_ = std::make_unique<Decoder>(ps, cfg_.decoder, alphabet_, attention_.get(), rng);
}

std::vector<std::vector<int>> Seq2SeqModel::target_rows(
    const std::vector<std::string>& transcripts) const {
    std::vector<std::vector<int>> rows;
    rows.reserve(transcripts.size());
    for (const auto& text : transcripts) {
        std::vector<int> row;
        row.push_back(alphabet_.sos_id());
        for (int id : alphabet_.encode(text)) row.push_back(id);
        row.push_back(alphabet_.eos_id());
        rows.push_back(std::move(row));
    }
    return rows;
}

Seq2SeqModel::Recognition Seq2SeqModel::recognize_one(const Tensor& image_b1, int width,
                                                      int beam_width) const {
    require(image_b1.ndim() == 4 && image_b1.dim(0) == 1, "recognize_one expects [1,H,W,1]");
    Tape t;
    Rng dummy(0);
    EncodedFeatures enc = encoder_->encode(t, image_b1, {width}, false, dummy);
    auto mem = attention_->prepare(t, enc);
    DecoderStepModel stepper(*decoder_, decoder_->memory_values(t, mem));
    int max_steps = decoder_->max_steps_for(enc.lengths[0]);
    BeamResult res = beam_width <= 1 ? greedy_decode(stepper, max_steps, stepper.eos_index())
                                     : beam_search(stepper, beam_width, max_steps,
                                                   stepper.eos_index());
    Recognition rec;
    std::vector<int> char_ids;
    char_ids.reserve(res.tokens.size());
    for (int tok : res.tokens) char_ids.push_back(tok);  // outputs below eos are char ids
    rec.text = alphabet_.decode(char_ids);
    rec.log_prob = res.log_prob;
    rec.truncated = res.truncated;
    rec.attention_rows = std::move(res.attention);
    return rec;
}

}  // namespace htr
