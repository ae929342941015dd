#include "htr/metrics.hpp"

#include <algorithm>
#include <sstream>

#include "htr/tensor.hpp"

namespace htr {

std::vector<char32_t> utf8_decode(const std::string& s) {
    std::vector<char32_t> out;
    size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        char32_t cp = 0;
        int extra = 0;
        if (c < 0x80) {
            cp = c;
        } else if ((c >> 5) == 0x6) {
            cp = c & 0x1f;
            extra = 1;
        } else if ((c >> 4) == 0xe) {
            cp = c & 0x0f;
            extra = 2;
        } else if ((c >> 3) == 0x1e) {
            cp = c & 0x07;
            extra = 3;
        } else {
            fail("invalid UTF-8 lead byte");
        }
        require(i + extra < s.size(), "truncated UTF-8 sequence");
        for (int k = 1; k <= extra; ++k) {
            unsigned char cc = static_cast<unsigned char>(s[i + k]);
            require((cc >> 6) == 0x2, "invalid UTF-8 continuation byte");
            cp = (cp << 6) | (cc & 0x3f);
        }
        out.push_back(cp);
        i += 1 + extra;
    }
    return out;
}

std::string utf8_encode(const std::vector<char32_t>& cps) {
    std::string out;
    for (char32_t cp : cps) {
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        } else {
            out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        }
    }
    return out;
}

int levenshtein(const std::vector<char32_t>& a, const std::vector<char32_t>& b) {
    const size_t n = a.size(), m = b.size();
    if (n == 0) return static_cast<int>(m);
    if (m == 0) return static_cast<int>(n);
    std::vector<int> row(m + 1);
    for (size_t j = 0; j <= m; ++j) row[j] = static_cast<int>(j);
    for (size_t i = 1; i <= n; ++i) {
        int diag = row[0];
        row[0] = static_cast<int>(i);
        for (size_t j = 1; j <= m; ++j) {
            int save = row[j];
            int subst = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, subst});
            diag = save;
        }
    }
    return row[m];
}

int levenshtein(const std::string& a, const std::string& b) {
    return levenshtein(utf8_decode(a), utf8_decode(b));
}

std::string EvalReport::summary_line() const {
    std::ostringstream os;
    os << "cer=" << cer << " edits=" << total_edits << " target_chars=" << total_target_chars
       << " items=" << items.size();
    return os.str();
}

std::string EvalReport::to_tsv() const {
    std::ostringstream os;
    os << "id\tedits\treference\thypothesis\n";
    for (const auto& it : items)
        os << it.id << "\t" << it.edits << "\t" << it.reference << "\t" << it.hypothesis << "\n";
    os << "#summary\t" << total_edits << "\t" << total_target_chars << "\t" << cer << "\n";
    return os.str();
}

EvalReport corpus_cer(const std::vector<std::pair<std::string, std::string>>& pairs,
                      const std::vector<std::string>& ids) {
    require(!pairs.empty(), "corpus_cer: no items");
    EvalReport rep;
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto& [hyp, ref] = pairs[i];
        EvalItem item;
        item.id = i < ids.size() ? ids[i] : std::to_string(i);
        item.hypothesis = hyp;
        item.reference = ref;
        item.edits = levenshtein(hyp, ref);
        rep.total_edits += item.edits;
        rep.total_target_chars += static_cast<long>(utf8_decode(ref).size());
        rep.items.push_back(std::move(item));
    }
    require(rep.total_target_chars > 0, "corpus_cer: all references are empty");
    rep.cer = static_cast<double>(rep.total_edits) / static_cast<double>(rep.total_target_chars);
    return rep;
}

}  // namespace htr
