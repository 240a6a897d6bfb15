#pragma once

// Reasoning-chain recovery from supporting passage pairs and the three
// experiment settings (single / ordered / random).

#include "chainlab/corpus.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace chainlab::chains {

struct ReasoningChain {
    corpus::Passage context_passage;  // first link
    corpus::Passage answer_passage;   // final link; contains the answer
};

enum class DiscardReason { ambiguous, answer_not_found, comparison };

std::string to_string(DiscardReason r);

struct Discard {
    DiscardReason reason;
};

using ExtractResult = std::variant<ReasoningChain, Discard>;

/// Token-level occurrence of a normalized phrase inside a token sequence.
/// Tokens that normalize to nothing (articles, punctuation) are transparent:
/// they may sit inside a match but cannot anchor its ends. Returns the first
/// occurrence as inclusive [start, end] indices into `tokens`.
std::optional<std::pair<int, int>> find_normalized_phrase(
    const std::vector<std::string>& tokens, const std::string& phrase);

bool contains_normalized_phrase(const std::vector<std::string>& tokens,
                                const std::string& phrase);

/// Order the two supporting passages into a chain:
/// comparison questions are discarded; if exactly one passage contains the
/// answer it becomes the answer passage; if both do, the cross-occurrence of
/// title entities decides, and unresolvable cases are discarded.
ExtractResult extract_chain(const corpus::QAExample& example);

// ---- experiment settings ----------------------------------------------

enum class SettingKind { single_oracle, ordered_oracle, random_order };

std::string to_string(SettingKind k);
SettingKind setting_from_string(const std::string& s);

struct OracleSetting {
    SettingKind kind = SettingKind::ordered_oracle;
    std::uint64_t seed = 0;  // consumed only by random_order
};

struct ReaderInput {
    std::string id;
    std::vector<std::string> question_tokens;
    std::vector<std::string> p1_tokens;
    std::vector<std::string> p2_tokens;
    std::string answer;
    // Inclusive token span of the answer inside p2_tokens; absent when the
    // answer does not occur there (excluded from training, kept for eval).
    std::optional<std::pair<int, int>> gold_span;
};

/// Realize one oracle setting for an extracted chain. With comatch_mode the
/// single-oracle setting duplicates the answer passage into both slots;
/// otherwise p1 is empty. Random order is a per-example coin flip seeded by
/// (setting seed, example id).
ReaderInput make_reader_input(const corpus::QAExample& example, const ReasoningChain& chain,
                              const OracleSetting& setting, bool comatch_mode);

struct DiscardReport {
    std::size_t processed = 0;
    std::size_t emitted = 0;
    std::map<std::string, std::size_t> discards;  // reason -> count
};

struct SettingsDataset {
    std::vector<ReaderInput> inputs;
    DiscardReport report;
};

SettingsDataset build_settings_dataset(const std::vector<corpus::QAExample>& examples,
                                       const OracleSetting& setting, bool comatch_mode);

// ---- file formats ---------------------------------------------------------

struct ChainRecord {
    std::string id;
    std::string question;
    std::string answer;
    ReasoningChain chain;
};

void save_chains(const std::vector<ChainRecord>& records, const std::string& path);
std::vector<ChainRecord> load_chains(const std::string& path);

void save_reader_inputs(const std::vector<ReaderInput>& inputs, SettingKind setting,
                        const std::string& path);
std::vector<ReaderInput> load_reader_inputs(const std::string& path);

}  // namespace chainlab::chains
