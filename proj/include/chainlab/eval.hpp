#pragma once

// Answer scoring (exact match / token F1) and the passage-order probe.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace chainlab::eval {

/// Lowercase, strip punctuation characters, drop article tokens (a, an, the),
/// and collapse whitespace. Idempotent.
std::string normalize_answer(const std::string& s);

/// Token bag for F1: lowercase + punctuation stripping + whitespace split.
/// Articles are kept (exact match is the stricter, article-free comparison).
std::vector<std::string> f1_tokens(const std::string& s);

int exact_match(const std::string& pred, const std::string& gold);
double f1_score(const std::string& pred, const std::string& gold);

struct ExampleScore {
    std::string id;
    int em = 0;
    double f1 = 0.0;
    bool missing = false;
};

struct EvalResult {
    double em = 0.0;  // macro averages
    double f1 = 0.0;
    std::size_t n = 0;
    std::vector<std::string> missing;
    std::vector<ExampleScore> per_example;
};

/// Macro-averaged scores over all gold ids; ids without a prediction score
/// 0/0 and are flagged.
EvalResult evaluate(const std::map<std::string, std::string>& predictions,
                    const std::map<std::string, std::string>& gold);

void save_eval_result(const EvalResult& r, const std::string& path);

// ---- passage-order probe ---------------------------------------------------

struct ProbeExample {
    std::vector<std::string> question_tokens;
    std::vector<std::string> first_tokens;   // passage shown first
    std::vector<std::string> second_tokens;  // passage shown second
    int label = 0;  // 0: first is the context passage, 1: second is
};

struct ProbeConfig {
    int hidden = 16;  // even; BiLSTM halves
    int embed = 16;
    double lr = 1e-3;
    int epochs = 4;
    int batch = 16;
    std::uint64_t seed = 1;
    double holdout = 0.2;  // tail fraction held out for accuracy
    int min_frequency = 1;
};

/// Trains a small ordering classifier (shared encoder for question and both
/// passages, attention between the passages, pooled features scored per
/// ordering) and returns held-out accuracy. Throws on single-class training
/// data.
double order_probe(const std::vector<ProbeExample>& data, const ProbeConfig& config);

}  // namespace chainlab::eval
