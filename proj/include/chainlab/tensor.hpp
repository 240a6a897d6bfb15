#pragma once

// Dense matrix values with tape-based reverse-mode differentiation.
// A Tape owns the nodes of one forward computation; Var is a cheap handle
// into it. Parameters live outside tapes in ParamSlots so one set of
// weights can be driven through many per-example graphs.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace chainlab::ad {

using Matrix = Eigen::MatrixXd;

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Additive log-space penalty used to exclude masked positions from softmax.
// Finite so that downstream arithmetic stays NaN-free; exp(-kMaskPenalty)
// underflows to exactly 0.
inline constexpr double kMaskPenalty = 1e30;

// splitmix64; the project-wide seeded RNG primitive (stable across platforms,
// unlike std distributions).
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline double uniform01(std::uint64_t& state) {
    return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

// Unbiased draw from [0, n) by rejection.
inline std::uint64_t rand_below(std::uint64_t& state, std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("rand_below: n must be positive");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = splitmix64(state);
    while (x >= limit) x = splitmix64(state);
    return x % n;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// A learnable tensor: persistent value plus the gradient accumulated by
// backward passes since the last optimizer step.
struct ParamSlot {
    Matrix value;
    Matrix grad;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool defined() const { return tape != nullptr; }
    const Matrix& value() const;
    const Matrix& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

class Tape {
public:
    // Constant: never receives gradient.
    Var leaf(Matrix v) { return {this, emit(std::move(v), false, "leaf")}; }

    // Differentiable leaf whose gradient stays on the tape (grad_check inputs).
    Var input(Matrix v) { return {this, emit(std::move(v), true, "input")}; }

    // Bind a parameter slot. Binding the same slot twice returns the same
    // node, so all uses share one gradient path and one storage location.
    Var param(ParamSlot& slot);

    // Generic custom op: `back` receives the upstream gradient and one
    // accumulation target per input (nullptr when that input needs no grad).
    Var custom(const std::vector<Var>& inputs, Matrix value,
               std::function<void(const Matrix&, const std::vector<Matrix*>&)> back);

    // Reverse pass from a 1x1 loss; flushes gradients into bound ParamSlots.
    void backward(Var loss);

    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Matrix& grad(int id);
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].rg; }
    std::size_t size() const { return nodes_.size(); }

    // Number of tape nodes bound to this slot (0 or 1 by construction).
    int bindings(const ParamSlot& slot) const;

    // Low-level API for op authors.
    int emit(Matrix value, bool requires_grad, const char* op);
    void set_backward(int id, std::function<void()> fn);
    void accumulate(int id, const Matrix& g);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void()> back;
        bool rg = false;
    };

    std::vector<Node> nodes_;
    std::map<const ParamSlot*, int> param_nodes_;
    bool ran_backward_ = false;
};

inline const Matrix& Var::value() const { return tape->value(id); }
inline const Matrix& Var::grad() const { return tape->grad(id); }

// ---- ops -------------------------------------------------------------
// Elementwise ops accept equal shapes, or a matrix paired with a column
// vector that is repeated across columns.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softmax_cols(Var a);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var rows(Var a, int r0, int n);
Var cols(Var a, int c0, int n);
Var sum(Var a);
Var pick(Var a, int r, int c);
Var log_sum_exp_cols(Var a);
// One output column per id; column t is row ids[t] of the table, transposed.
Var embed_rows(Var table, const std::vector<int>& ids);
// Training: zero entries with probability p_drop, scale survivors by
// 1/(1-p_drop). Inference (or p_drop == 0): identity.
Var dropout_mask(Var a, double p_drop, std::uint64_t seed, bool training);

// ---- verification ----------------------------------------------------

// Max over input entries of |g_analytic - g_fd| / max(1e-8, |ga| + |gfd|),
// with central finite differences recomputed through value-only forwards.
double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                  const std::vector<Matrix>& inputs, double eps = 1e-5);

// Same check against the parameters named in `names` (all when empty);
// f builds the scalar loss from store-bound params on the given tape.
class ParamStore;
double grad_check_params(const std::function<Var(Tape&)>& f, ParamStore& store,
                         std::vector<std::string> names = {}, double eps = 1e-5);

// ---- parameter store ---------------------------------------------------

class ParamStore {
public:
    ParamSlot& create(const std::string& name, Eigen::Index rows, Eigen::Index cols);
    ParamSlot& at(const std::string& name);
    const ParamSlot& at(const std::string& name) const;
    bool has(const std::string& name) const { return slots_.count(name) > 0; }
    std::vector<std::string> names() const;
    std::size_t size() const { return slots_.size(); }

    void zero_grads();
    double grad_norm() const;
    // Scales every gradient so the global norm is at most max_norm.
    void clip_grad_norm(double max_norm);

    // Version-tagged JSON checkpoint; values serialized row-major.
    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

private:
    std::map<std::string, ParamSlot> slots_;
};

void init_uniform(ParamSlot& slot, double bound, std::uint64_t& rng_state);

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8, double clip_norm = 5.0)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), clip_norm_(clip_norm) {}

    // One update from the store's accumulated gradients; zeroes them after.
    void step(ParamStore& store);

    double lr() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_, clip_norm_;
    long t_ = 0;
    std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

}  // namespace chainlab::ad
