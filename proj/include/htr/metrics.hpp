#pragma once

#include <string>
#include <vector>

namespace htr {

// Minimal UTF-8 round-trip; comparison happens on scalar code points.
std::vector<char32_t> utf8_decode(const std::string& s);
std::string utf8_encode(const std::vector<char32_t>& cps);

// Unit-cost edit distance (insert/delete/substitute).
int levenshtein(const std::string& a, const std::string& b);
int levenshtein(const std::vector<char32_t>& a, const std::vector<char32_t>& b);

struct EvalItem {
    std::string id;
    std::string hypothesis;
    std::string reference;
    int edits = 0;
};

struct EvalReport {
    double cer = 0.0;
    long total_edits = 0;
    long total_target_chars = 0;
    std::vector<EvalItem> items;

    std::string summary_line() const;
    std::string to_tsv() const;
};

// Micro-averaged character error rate: sum of edit distances over the sum of
// reference lengths. All-empty references are an error, not CER 0.
EvalReport corpus_cer(const std::vector<std::pair<std::string, std::string>>& hyp_ref_pairs,
                      const std::vector<std::string>& ids = {});

}  // namespace htr
