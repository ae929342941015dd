#pragma once

#include <map>
#include <string>
#include <vector>

namespace htr {

// Character inventory plus reserved ids. Raw token ids: characters occupy
// 0..size()-1, then blank (CTC channel only), sos, eos, pad. The CTC head has
// size()+1 channels with blank last; the decoder emits size()+1 outputs with
// eos last and never produces sos/pad/blank.
class Alphabet {
  public:
    Alphabet() = default;
    static Alphabet from_utf8(const std::string& chars);

    int size() const { return static_cast<int>(chars_.size()); }
    int blank_id() const { return size(); }
    int sos_id() const { return size() + 1; }
    int eos_id() const { return size() + 2; }
    int pad_id() const { return size() + 3; }
    int total_ids() const { return size() + 4; }

    int ctc_channels() const { return size() + 1; }      // chars + blank
    int decoder_outputs() const { return size() + 1; }   // chars + eos

    // decoder output index <-> raw token id
    int output_index_of(int token_id) const;
    int token_of_output(int output_index) const;

    bool has_char(char32_t c) const { return index_.count(c) > 0; }
    int id_of(char32_t c) const;
    char32_t char_at(int id) const;

    std::vector<int> encode(const std::string& utf8_text) const;
    std::string decode(const std::vector<int>& char_ids) const;
    std::string to_utf8() const;

    bool operator==(const Alphabet& o) const { return chars_ == o.chars_; }

  private:
    std::vector<char32_t> chars_;
    std::map<char32_t, int> index_;
};

}  // namespace htr
