#include "chainlab/corpus.hpp"

#include "chainlab/tensor.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace chainlab::corpus {

using nlohmann::json;

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char ch : text) {
        if (std::isspace(ch)) {
            flush();
        } else if (std::ispunct(ch)) {
            flush();
            out.emplace_back(1, static_cast<char>(ch));
        } else {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        }
    }
    flush();
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

Passage::Passage(std::string title_, std::string text_)
    : title(std::move(title_)), text(std::move(text_)), tokens(tokenize(text)) {}

std::string to_string(QType t) {
    switch (t) {
        case QType::bridge: return "bridge";
        case QType::comparison: return "comparison";
        default: return "unknown";
    }
}

QType qtype_from_string(const std::string& s) {
    if (s == "bridge") return QType::bridge;
    if (s == "comparison") return QType::comparison;
    return QType::unknown;
}

bool operator==(const Passage& a, const Passage& b) {
    return a.title == b.title && a.text == b.text;
}

bool operator==(const QAExample& a, const QAExample& b) {
    return a.id == b.id && a.question == b.question && a.answer == b.answer &&
           a.qtype == b.qtype && a.supporting == b.supporting && a.distractors == b.distractors;
}

// ---- vocabulary ---------------------------------------------------------

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& token_seqs,
                             int min_frequency) {
    if (min_frequency < 1) throw std::invalid_argument("build_vocab: min_frequency must be >= 1");
    std::map<std::string, int> freq;
    for (const auto& seq : token_seqs)
        for (const auto& tok : seq) ++freq[tok];
    Vocabulary v;
    v.min_frequency_ = min_frequency;
    int next = 2;
    for (const auto& [tok, n] : freq)
        if (n >= min_frequency) v.index_[tok] = next++;
    return v;
}

void Vocabulary::save(const std::string& path) const {
    json tokens = json::object();
    for (const auto& [tok, idx] : index_) tokens[tok] = idx;
    json doc = {{"format", "chainlab-vocab"},
                {"version", 1},
                {"min_frequency", min_frequency_},
                {"tokens", tokens}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << doc.dump(1) << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    json doc = json::parse(in);
    if (doc.value("format", "") != "chainlab-vocab")
        throw std::runtime_error(path + ": not a chainlab-vocab file");
    Vocabulary v;
    v.min_frequency_ = doc.value("min_frequency", 1);
    for (const auto& [tok, idx] : doc.at("tokens").items()) v.index_[tok] = idx.get<int>();
    return v;
}

Vocabulary build_vocab(const std::vector<QAExample>& examples, int min_frequency) {
    std::vector<std::vector<std::string>> seqs;
    for (const auto& ex : examples) {
        seqs.push_back(ex.question_tokens);
        for (const auto& p : ex.supporting) seqs.push_back(p.tokens);
        for (const auto& p : ex.distractors) seqs.push_back(p.tokens);
    }
    return Vocabulary::build(seqs, min_frequency);
}

// ---- dataset IO -----------------------------------------------------------

namespace {

std::string join_sentences(const json& sentences) {
    std::string text;
    for (const auto& s : sentences) {
        if (!text.empty()) text.push_back(' ');
        text += s.get<std::string>();
    }
    return text;
}

QAExample parse_record(const json& rec) {
    QAExample ex;
    ex.id = rec.at("_id").get<std::string>();
    ex.question = rec.at("question").get<std::string>();
    ex.question_tokens = tokenize(ex.question);
    ex.answer = rec.at("answer").get<std::string>();
    ex.qtype = qtype_from_string(rec.value("type", "unknown"));

    std::set<std::string> support_titles;
    for (const auto& sf : rec.at("supporting_facts"))
        support_titles.insert(sf.at(0).get<std::string>());

    for (const auto& ctx : rec.at("context")) {
        Passage p(ctx.at(0).get<std::string>(), join_sentences(ctx.at(1)));
        if (p.title.empty()) throw std::runtime_error("empty passage title");
        if (support_titles.count(p.title))
            ex.supporting.push_back(std::move(p));
        else
            ex.distractors.push_back(std::move(p));
    }
    return ex;
}

}  // namespace

LoadResult load_dataset(const std::string& path, DatasetFormat format) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    LoadResult result;

    auto consume = [&](const json& rec, std::size_t where) {
        try {
            QAExample ex = parse_record(rec);
            if (ex.supporting.size() != 2) {
                ++result.skipped_bad_support;
                return;
            }
            result.examples.push_back(std::move(ex));
        } catch (const std::exception& e) {
            result.errors.push_back({where, e.what()});
        }
    };

    if (format == DatasetFormat::hotpot_json) {
        json doc;
        try {
            doc = json::parse(in);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": " + e.what());
        }
        if (!doc.is_array()) throw std::runtime_error(path + ": expected a top-level array");
        std::size_t idx = 0;
        for (const auto& rec : doc) consume(rec, idx++);
    } else {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            json rec;
            try {
                rec = json::parse(line);
            } catch (const std::exception& e) {
                result.errors.push_back({lineno, e.what()});
                continue;
            }
            consume(rec, lineno);
        }
    }
    return result;
}

void save_dataset(const std::vector<QAExample>& examples, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& ex : examples) {
        json context = json::array();
        json sfacts = json::array();
        for (const auto& p : ex.supporting) {
            context.push_back(json::array({p.title, json::array({p.text})}));
            sfacts.push_back(json::array({p.title, 0}));
        }
        for (const auto& p : ex.distractors)
            context.push_back(json::array({p.title, json::array({p.text})}));
        json rec = {{"_id", ex.id},
                    {"question", ex.question},
                    {"answer", ex.answer},
                    {"type", to_string(ex.qtype)},
                    {"context", context},
                    {"supporting_facts", sfacts}};
        out << rec.dump() << "\n";
    }
}

// ---- synthetic two-hop data -----------------------------------------------

namespace {

const char* kSyllables[12] = {"ba", "de", "ki", "lo", "mu", "na",
                              "po", "ra", "su", "ti", "vo", "ze"};

std::string make_word(const char* prefix, int i) {
    std::string w = prefix;
    w += kSyllables[i % 12];
    w += kSyllables[(i / 12) % 12];
    return w;
}

constexpr int kTopicPool = 40;
constexpr int kBridgePool = 30;
constexpr int kAnswerPool = 30;
constexpr int kTitlePool = 25;
const char* kRelations[6] = {"color", "shape", "origin", "owner", "flavor", "size"};

// Distinct draw of k indices from [0, pool) via partial Fisher-Yates.
std::vector<int> draw_distinct(std::uint64_t& rng, int k, int pool) {
    std::vector<int> idx(static_cast<std::size_t>(pool));
    for (int i = 0; i < pool; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
        int j = i + static_cast<int>(ad::rand_below(rng, static_cast<std::uint64_t>(pool - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

}  // namespace

std::vector<QAExample> gen_synthetic(int n, int n_candidates, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("gen_synthetic: n must be >= 1");
    if (n_candidates < 2) throw std::invalid_argument("gen_synthetic: n_candidates must be >= 2");
    if (n_candidates > kBridgePool)
        throw std::invalid_argument("gen_synthetic: n_candidates exceeds bridge pool");

    std::uint64_t rng = seed * 0x9e3779b97f4a7c15ULL + 0x51ab2cd9ULL;
    std::vector<QAExample> out;
    out.reserve(static_cast<std::size_t>(n));

    for (int i = 0; i < n; ++i) {
        const std::string topic = make_word("ta", static_cast<int>(ad::rand_below(rng, kTopicPool)));
        const std::string relation = kRelations[ad::rand_below(rng, 6)];
        std::vector<int> bridges = draw_distinct(rng, n_candidates, kBridgePool);
        std::vector<int> answers = draw_distinct(rng, n_candidates, kAnswerPool);
        const int truth = static_cast<int>(ad::rand_below(rng, static_cast<std::uint64_t>(n_candidates)));
        const std::string p2_title = make_word("ka", static_cast<int>(ad::rand_below(rng, kTitlePool)));

        std::string bridge = make_word("bo", bridges[static_cast<std::size_t>(truth)]);
        std::string answer = make_word("ve", answers[static_cast<std::size_t>(truth)]);

        std::string p2_text;
        for (int c = 0; c < n_candidates; ++c) {
            if (c) p2_text.push_back(' ');
            p2_text += "the " + relation + " of " + make_word("bo", bridges[static_cast<std::size_t>(c)]) +
                       " is " + make_word("ve", answers[static_cast<std::size_t>(c)]) + " .";
        }
        std::string p1_text = topic + " is linked to " + bridge + " .";
        std::string question =
            "what is the " + relation + " of the thing linked to " + topic + " ?";

        QAExample ex;
        ex.id = "syn-" + std::to_string(seed) + "-" + std::to_string(i);
        ex.question = question;
        ex.question_tokens = tokenize(question);
        ex.answer = answer;
        ex.qtype = QType::bridge;
        Passage p1(topic, p1_text);
        Passage p2(p2_title, p2_text);
        // Presentation order of the supporting pair is randomized so the
        // chain heuristic sees both directions.
        if (ad::rand_below(rng, 2) == 0) {
            ex.supporting = {std::move(p1), std::move(p2)};
        } else {
            ex.supporting = {std::move(p2), std::move(p1)};
        }
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace chainlab::corpus
