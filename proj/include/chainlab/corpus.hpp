#pragma once

// HotpotQA-style ingestion, tokenization, vocabulary, and the synthetic
// two-hop bridging generator used for desk-scale experiments.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace chainlab::corpus {

/// Lowercase, split on whitespace, and break punctuation characters into
/// their own tokens. Deterministic and idempotent under re-joining.
std::vector<std::string> tokenize(const std::string& text);

std::string join_tokens(const std::vector<std::string>& tokens);

struct Passage {
    std::string title;   // topic entity of the passage
    std::string text;
    std::vector<std::string> tokens;

    Passage() = default;
    Passage(std::string title_, std::string text_);
};

enum class QType { bridge, comparison, unknown };

std::string to_string(QType t);
QType qtype_from_string(const std::string& s);

struct QAExample {
    std::string id;
    std::string question;
    std::vector<std::string> question_tokens;
    std::string answer;
    std::vector<Passage> supporting;  // exactly two
    std::vector<Passage> distractors;
    QType qtype = QType::unknown;
};

bool operator==(const Passage& a, const Passage& b);
bool operator==(const QAExample& a, const QAExample& b);

// ---- vocabulary ---------------------------------------------------------

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary() = default;

    int id(const std::string& token) const;  // kUnk for unknown tokens
    bool contains(const std::string& token) const { return index_.count(token) > 0; }
    int size() const { return static_cast<int>(index_.size()) + 2; }
    int min_frequency() const { return min_frequency_; }

    std::vector<int> encode(const std::vector<std::string>& tokens) const;

    /// Tokens with frequency >= min_frequency over the given sequences,
    /// plus PAD and UNK.
    static Vocabulary build(const std::vector<std::vector<std::string>>& token_seqs,
                            int min_frequency);

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::map<std::string, int> index_;  // starts at 2; sorted insertion order
    int min_frequency_ = 1;
};

Vocabulary build_vocab(const std::vector<QAExample>& examples, int min_frequency);

// ---- dataset IO -----------------------------------------------------------

enum class DatasetFormat { hotpot_json, jsonl };

struct LoadError {
    std::size_t record;  // array index or 1-based line number
    std::string message;
};

struct LoadResult {
    std::vector<QAExample> examples;
    std::size_t skipped_bad_support = 0;  // records without exactly 2 supporting titles
    std::vector<LoadError> errors;        // malformed records, processing continued
};

/// Throws on unreadable files; per-record problems are reported in the result.
LoadResult load_dataset(const std::string& path, DatasetFormat format);

void save_dataset(const std::vector<QAExample>& examples, const std::string& path);

// ---- synthetic two-hop data -----------------------------------------------

/// Bridging examples where the answer passage lists `n_candidates`
/// (bridge, answer) facts, the context passage links its topic to exactly one
/// bridge, and the question withholds the bridge. Pure function of seed.
std::vector<QAExample> gen_synthetic(int n, int n_candidates, std::uint64_t seed);

}  // namespace chainlab::corpus
