#include "chainlab/tensor.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace chainlab::ad {
namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

void require_same_tape(Var a, Var b, const char* op) {
    if (a.tape == nullptr || a.tape != b.tape)
        throw std::invalid_argument(std::string(op) + ": operands must live on one tape");
}

}  // namespace

int Tape::emit(Matrix value, bool requires_grad, const char* op) {
    if (!value.allFinite())
        throw NumericError(std::string(op) + " produced a non-finite value");
    Node n;
    n.value = std::move(value);
    n.rg = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::set_backward(int id, std::function<void()> fn) {
    nodes_[static_cast<std::size_t>(id)].back = std::move(fn);
}

Matrix& Tape::grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) { grad(id) += g; }

Var Tape::param(ParamSlot& slot) {
    auto it = param_nodes_.find(&slot);
    if (it != param_nodes_.end()) return {this, it->second};
    int id = emit(slot.value, true, "param");
    param_nodes_.emplace(&slot, id);
    return {this, id};
}

int Tape::bindings(const ParamSlot& slot) const {
    return param_nodes_.count(&slot) ? 1 : 0;
}

Var Tape::custom(const std::vector<Var>& inputs, Matrix value,
                 std::function<void(const Matrix&, const std::vector<Matrix*>&)> back) {
    bool rg = false;
    std::vector<int> ids;
    ids.reserve(inputs.size());
    for (Var v : inputs) {
        if (v.tape != this) throw std::invalid_argument("custom: input from another tape");
        rg = rg || requires_grad(v.id);
        ids.push_back(v.id);
    }
    int id = emit(std::move(value), rg, "custom");
    if (rg) {
        set_backward(id, [this, ids, id, back = std::move(back)] {
            std::vector<Matrix*> sinks(ids.size(), nullptr);
            for (std::size_t i = 0; i < ids.size(); ++i)
                if (requires_grad(ids[i])) sinks[i] = &grad(ids[i]);
            back(grad(id), sinks);
        });
    }
    return {this, id};
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
    if (ran_backward_) throw std::logic_error("backward: tape already consumed");
    const Matrix& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1)
        throw ShapeError("backward: loss must be 1x1, got " + shape_str(lv));
    ran_backward_ = true;
    grad(loss.id)(0, 0) = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.rg && n.back && n.grad.size() != 0) n.back();
    }
    for (const auto& [slot, id] : param_nodes_) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.size() == 0) continue;
        ParamSlot* s = const_cast<ParamSlot*>(slot);
        if (s->grad.size() == 0) s->zero_grad();
        s->grad += n.grad;
    }
}

// ---- elementwise helpers ----------------------------------------------

namespace {

enum class Broadcast { none, left_col, right_col };

Broadcast classify(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::none;
    if (b.cols() == 1 && a.rows() == b.rows()) return Broadcast::right_col;
    if (a.cols() == 1 && a.rows() == b.rows()) return Broadcast::left_col;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
}

Matrix rep(const Matrix& col, Eigen::Index n) { return col.replicate(1, n); }

}  // namespace

Var add(Var a, Var b) {
    require_same_tape(a, b, "add");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    const Matrix& bv = t.value(b.id);
    Broadcast br = classify(av, bv, "add");
    Matrix y;
    if (br == Broadcast::none) y = av + bv;
    else if (br == Broadcast::right_col) y = av + rep(bv, av.cols());
    else y = rep(av, bv.cols()) + bv;
    int id = t.emit(std::move(y), t.requires_grad(a.id) || t.requires_grad(b.id), "add");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, bi = b.id, id, br] {
            const Matrix& g = t.grad(id);
            if (t.requires_grad(ai))
                t.accumulate(ai, br == Broadcast::left_col ? Matrix(g.rowwise().sum()) : g);
            if (t.requires_grad(bi))
                t.accumulate(bi, br == Broadcast::right_col ? Matrix(g.rowwise().sum()) : g);
        });
    }
    return {&t, id};
}

Var sub(Var a, Var b) {
    require_same_tape(a, b, "sub");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    const Matrix& bv = t.value(b.id);
    Broadcast br = classify(av, bv, "sub");
    Matrix y;
    if (br == Broadcast::none) y = av - bv;
    else if (br == Broadcast::right_col) y = av - rep(bv, av.cols());
    else y = rep(av, bv.cols()) - bv;
    int id = t.emit(std::move(y), t.requires_grad(a.id) || t.requires_grad(b.id), "sub");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, bi = b.id, id, br] {
            const Matrix& g = t.grad(id);
            if (t.requires_grad(ai))
                t.accumulate(ai, br == Broadcast::left_col ? Matrix(g.rowwise().sum()) : g);
            if (t.requires_grad(bi))
                t.accumulate(bi, br == Broadcast::right_col ? Matrix(-g.rowwise().sum()) : Matrix(-g));
        });
    }
    return {&t, id};
}

Var mul(Var a, Var b) {
    require_same_tape(a, b, "mul");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    const Matrix& bv = t.value(b.id);
    Broadcast br = classify(av, bv, "mul");
    Matrix y;
    if (br == Broadcast::none) y = av.cwiseProduct(bv);
    else if (br == Broadcast::right_col) y = av.cwiseProduct(rep(bv, av.cols()));
    else y = rep(av, bv.cols()).cwiseProduct(bv);
    int id = t.emit(std::move(y), t.requires_grad(a.id) || t.requires_grad(b.id), "mul");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, bi = b.id, id, br] {
            const Matrix& g = t.grad(id);
            const Matrix& av2 = t.value(ai);
            const Matrix& bv2 = t.value(bi);
            if (t.requires_grad(ai)) {
                if (br == Broadcast::left_col)
                    t.accumulate(ai, Matrix(g.cwiseProduct(bv2).rowwise().sum()));
                else if (br == Broadcast::right_col)
                    t.accumulate(ai, Matrix(g.cwiseProduct(rep(bv2, g.cols()))));
                else
                    t.accumulate(ai, Matrix(g.cwiseProduct(bv2)));
            }
            if (t.requires_grad(bi)) {
                if (br == Broadcast::right_col)
                    t.accumulate(bi, Matrix(g.cwiseProduct(av2).rowwise().sum()));
                else if (br == Broadcast::left_col)
                    t.accumulate(bi, Matrix(g.cwiseProduct(rep(av2, g.cols()))));
                else
                    t.accumulate(bi, Matrix(g.cwiseProduct(av2)));
            }
        });
    }
    return {&t, id};
}

Var scale(Var a, double c) {
    Tape& t = *a.tape;
    int id = t.emit(Matrix(c * t.value(a.id)), t.requires_grad(a.id), "scale");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, id, c] { t.accumulate(ai, Matrix(c * t.grad(id))); });
    }
    return {&t, id};
}

Var matmul(Var a, Var b) {
    require_same_tape(a, b, "matmul");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    const Matrix& bv = t.value(b.id);
    if (av.cols() != bv.rows())
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(av) + " * " +
                         shape_str(bv));
    int id = t.emit(Matrix(av * bv), t.requires_grad(a.id) || t.requires_grad(b.id), "matmul");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, bi = b.id, id] {
            const Matrix& g = t.grad(id);
            if (t.requires_grad(ai)) t.accumulate(ai, Matrix(g * t.value(bi).transpose()));
            if (t.requires_grad(bi)) t.accumulate(bi, Matrix(t.value(ai).transpose() * g));
        });
    }
    return {&t, id};
}

Var transpose(Var a) {
    Tape& t = *a.tape;
    int id = t.emit(Matrix(t.value(a.id).transpose()), t.requires_grad(a.id), "transpose");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, id] { t.accumulate(ai, Matrix(t.grad(id).transpose())); });
    }
    return {&t, id};
}

Var tanh(Var a) {
    Tape& t = *a.tape;
    int id = t.emit(Matrix(t.value(a.id).array().tanh()), t.requires_grad(a.id), "tanh");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, id] {
            const Matrix& y = t.value(id);
            t.accumulate(ai, Matrix(t.grad(id).array() * (1.0 - y.array().square())));
        });
    }
    return {&t, id};
}

Var sigmoid(Var a) {
    Tape& t = *a.tape;
    // 0.5*(1+tanh(x/2)) is stable for both signs.
    Matrix y = (0.5 * (1.0 + (0.5 * t.value(a.id)).array().tanh())).matrix();
    int id = t.emit(std::move(y), t.requires_grad(a.id), "sigmoid");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, id] {
            const Matrix& y2 = t.value(id);
            t.accumulate(ai, Matrix(t.grad(id).array() * y2.array() * (1.0 - y2.array())));
        });
    }
    return {&t, id};
}

Var softmax_cols(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = t.value(a.id);
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        double m = x.col(c).maxCoeff();
        Eigen::ArrayXd e = (x.col(c).array() - m).exp();
        y.col(c) = e / e.sum();
    }
    int id = t.emit(std::move(y), t.requires_grad(a.id), "softmax_cols");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, id] {
            const Matrix& y2 = t.value(id);
            const Matrix& g = t.grad(id);
            Matrix dx(y2.rows(), y2.cols());
            for (Eigen::Index c = 0; c < y2.cols(); ++c) {
                double dot = g.col(c).dot(y2.col(c));
                dx.col(c) = y2.col(c).array() * (g.col(c).array() - dot);
            }
            t.accumulate(ai, dx);
        });
    }
    return {&t, id};
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    Tape& t = *parts.front().tape;
    Eigen::Index cols = t.value(parts.front().id).cols();
    Eigen::Index total = 0;
    bool rg = false;
    for (Var p : parts) {
        require_same_tape(parts.front(), p, "concat_rows");
        const Matrix& v = t.value(p.id);
        if (v.cols() != cols)
            throw ShapeError("concat_rows: column counts differ, " + shape_str(v) + " vs " +
                             std::to_string(cols) + " cols");
        total += v.rows();
        rg = rg || t.requires_grad(p.id);
    }
    Matrix y(total, cols);
    Eigen::Index r = 0;
    std::vector<int> ids;
    std::vector<Eigen::Index> offs, sizes;
    for (Var p : parts) {
        const Matrix& v = t.value(p.id);
        y.middleRows(r, v.rows()) = v;
        ids.push_back(p.id);
        offs.push_back(r);
        sizes.push_back(v.rows());
        r += v.rows();
    }
    int id = t.emit(std::move(y), rg, "concat_rows");
    if (rg) {
        t.set_backward(id, [&t, ids, offs, sizes, id] {
            const Matrix& g = t.grad(id);
            for (std::size_t i = 0; i < ids.size(); ++i)
                if (t.requires_grad(ids[i]))
                    t.accumulate(ids[i], Matrix(g.middleRows(offs[i], sizes[i])));
        });
    }
    return {&t, id};
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    Tape& t = *parts.front().tape;
    Eigen::Index rows_n = t.value(parts.front().id).rows();
    Eigen::Index total = 0;
    bool rg = false;
    for (Var p : parts) {
        require_same_tape(parts.front(), p, "concat_cols");
        const Matrix& v = t.value(p.id);
        if (v.rows() != rows_n)
            throw ShapeError("concat_cols: row counts differ, " + shape_str(v) + " vs " +
                             std::to_string(rows_n) + " rows");
        total += v.cols();
        rg = rg || t.requires_grad(p.id);
    }
    Matrix y(rows_n, total);
    Eigen::Index c = 0;
    std::vector<int> ids;
    std::vector<Eigen::Index> offs, sizes;
    for (Var p : parts) {
        const Matrix& v = t.value(p.id);
        y.middleCols(c, v.cols()) = v;
        ids.push_back(p.id);
        offs.push_back(c);
        sizes.push_back(v.cols());
        c += v.cols();
    }
    int id = t.emit(std::move(y), rg, "concat_cols");
    if (rg) {
        t.set_backward(id, [&t, ids, offs, sizes, id] {
            const Matrix& g = t.grad(id);
            for (std::size_t i = 0; i < ids.size(); ++i)
                if (t.requires_grad(ids[i]))
                    t.accumulate(ids[i], Matrix(g.middleCols(offs[i], sizes[i])));
        });
    }
    return {&t, id};
}

Var rows(Var a, int r0, int n) {
    Tape& t = *a.tape;
    const Matrix& v = t.value(a.id);
    if (r0 < 0 || n < 1 || r0 + n > v.rows())
        throw ShapeError("rows: block [" + std::to_string(r0) + "," + std::to_string(r0 + n) +
                         ") out of " + shape_str(v));
    int id = t.emit(Matrix(v.middleRows(r0, n)), t.requires_grad(a.id), "rows");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, id, r0, n] {
            t.grad(ai).middleRows(r0, n) += t.grad(id);
        });
    }
    return {&t, id};
}

Var cols(Var a, int c0, int n) {
    Tape& t = *a.tape;
    const Matrix& v = t.value(a.id);
    if (c0 < 0 || n < 1 || c0 + n > v.cols())
        throw ShapeError("cols: block [" + std::to_string(c0) + "," + std::to_string(c0 + n) +
                         ") out of " + shape_str(v));
    int id = t.emit(Matrix(v.middleCols(c0, n)), t.requires_grad(a.id), "cols");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, id, c0, n] {
            t.grad(ai).middleCols(c0, n) += t.grad(id);
        });
    }
    return {&t, id};
}

Var sum(Var a) {
    Tape& t = *a.tape;
    Matrix y(1, 1);
    y(0, 0) = t.value(a.id).sum();
    int id = t.emit(std::move(y), t.requires_grad(a.id), "sum");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, id] {
            const Matrix& v = t.value(ai);
            t.accumulate(ai, Matrix(Matrix::Constant(v.rows(), v.cols(), t.grad(id)(0, 0))));
        });
    }
    return {&t, id};
}

Var pick(Var a, int r, int c) {
    Tape& t = *a.tape;
    const Matrix& v = t.value(a.id);
    if (r < 0 || c < 0 || r >= v.rows() || c >= v.cols())
        throw ShapeError("pick: (" + std::to_string(r) + "," + std::to_string(c) + ") out of " +
                         shape_str(v));
    Matrix y(1, 1);
    y(0, 0) = v(r, c);
    int id = t.emit(std::move(y), t.requires_grad(a.id), "pick");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, id, r, c] { t.grad(ai)(r, c) += t.grad(id)(0, 0); });
    }
    return {&t, id};
}

Var log_sum_exp_cols(Var a) {
    Tape& t = *a.tape;
    const Matrix& x = t.value(a.id);
    Matrix y(1, x.cols());
    Matrix soft(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        double m = x.col(c).maxCoeff();
        Eigen::ArrayXd e = (x.col(c).array() - m).exp();
        double s = e.sum();
        y(0, c) = m + std::log(s);
        soft.col(c) = e / s;
    }
    int id = t.emit(std::move(y), t.requires_grad(a.id), "log_sum_exp_cols");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, id, soft = std::move(soft)] {
            const Matrix& g = t.grad(id);
            Matrix dx = soft;
            for (Eigen::Index c = 0; c < dx.cols(); ++c) dx.col(c) *= g(0, c);
            t.accumulate(ai, dx);
        });
    }
    return {&t, id};
}

Var embed_rows(Var table, const std::vector<int>& ids) {
    Tape& t = *table.tape;
    const Matrix& tab = t.value(table.id);
    Matrix y(tab.cols(), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tab.rows())
            throw ShapeError("embed_rows: id " + std::to_string(ids[i]) + " out of " +
                             shape_str(tab));
        y.col(static_cast<Eigen::Index>(i)) = tab.row(ids[i]).transpose();
    }
    int id = t.emit(std::move(y), t.requires_grad(table.id), "embed_rows");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ti = table.id, id, ids] {
            const Matrix& g = t.grad(id);
            Matrix& tg = t.grad(ti);
            for (std::size_t i = 0; i < ids.size(); ++i)
                tg.row(ids[i]) += g.col(static_cast<Eigen::Index>(i)).transpose();
        });
    }
    return {&t, id};
}

Var dropout_mask(Var a, double p_drop, std::uint64_t seed, bool training) {
    if (p_drop < 0.0 || p_drop >= 1.0)
        throw std::invalid_argument("dropout_mask: p_drop must be in [0,1)");
    if (!training || p_drop == 0.0) return a;
    Tape& t = *a.tape;
    const Matrix& x = t.value(a.id);
    Matrix mask(x.rows(), x.cols());
    std::uint64_t state = seed;
    const double keep_scale = 1.0 / (1.0 - p_drop);
    for (Eigen::Index c = 0; c < x.cols(); ++c)
        for (Eigen::Index r = 0; r < x.rows(); ++r)
            mask(r, c) = uniform01(state) < p_drop ? 0.0 : keep_scale;
    int id = t.emit(Matrix(x.cwiseProduct(mask)), t.requires_grad(a.id), "dropout_mask");
    if (t.requires_grad(id)) {
        t.set_backward(id, [&t, ai = a.id, id, mask = std::move(mask)] {
            t.accumulate(ai, Matrix(t.grad(id).cwiseProduct(mask)));
        });
    }
    return {&t, id};
}

// ---- gradient checking -------------------------------------------------

double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                  const std::vector<Matrix>& inputs, double eps) {
    std::vector<Matrix> analytic;
    {
        Tape t;
        std::vector<Var> vars;
        vars.reserve(inputs.size());
        for (const Matrix& m : inputs) vars.push_back(t.input(m));
        Var loss = f(t, vars);
        t.backward(loss);
        for (Var v : vars) analytic.push_back(v.grad());
    }
    auto eval = [&](const std::vector<Matrix>& xs) {
        Tape t;
        std::vector<Var> vars;
        vars.reserve(xs.size());
        for (const Matrix& m : xs) vars.push_back(t.input(m));
        return f(t, vars).value()(0, 0);
    };
    double worst = 0.0;
    std::vector<Matrix> xs = inputs;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        for (Eigen::Index c = 0; c < xs[i].cols(); ++c) {
            for (Eigen::Index r = 0; r < xs[i].rows(); ++r) {
                double orig = xs[i](r, c);
                xs[i](r, c) = orig + eps;
                double fp = eval(xs);
                xs[i](r, c) = orig - eps;
                double fm = eval(xs);
                xs[i](r, c) = orig;
                double fd = (fp - fm) / (2.0 * eps);
                double ga = analytic[i](r, c);
                double rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

double grad_check_params(const std::function<Var(Tape&)>& f, ParamStore& store,
                         std::vector<std::string> names, double eps) {
    if (names.empty()) names = store.names();
    store.zero_grads();
    std::map<std::string, Matrix> analytic;
    {
        Tape t;
        Var loss = f(t);
        t.backward(loss);
        for (const auto& n : names) analytic[n] = store.at(n).grad;
    }
    auto eval = [&] {
        Tape t;
        return f(t).value()(0, 0);
    };
    double worst = 0.0;
    for (const auto& n : names) {
        Matrix& v = store.at(n).value;
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
            for (Eigen::Index r = 0; r < v.rows(); ++r) {
                double orig = v(r, c);
                v(r, c) = orig + eps;
                double fp = eval();
                v(r, c) = orig - eps;
                double fm = eval();
                v(r, c) = orig;
                double fd = (fp - fm) / (2.0 * eps);
                double ga = analytic[n](r, c);
                double rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
                worst = std::max(worst, rel);
            }
        }
    }
    store.zero_grads();
    return worst;
}

// ---- parameter store -----------------------------------------------------

ParamSlot& ParamStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (slots_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    ParamSlot& s = slots_[name];
    s.value.setZero(rows, cols);
    s.zero_grad();
    return s;
}

ParamSlot& ParamStore::at(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return it->second;
}

const ParamSlot& ParamStore::at(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(slots_.size());
    for (const auto& [k, v] : slots_) out.push_back(k);
    return out;
}

void ParamStore::zero_grads() {
    for (auto& [k, s] : slots_) s.zero_grad();
}

double ParamStore::grad_norm() const {
    double sq = 0.0;
    for (const auto& [k, s] : slots_) sq += s.grad.squaredNorm();
    return std::sqrt(sq);
}

void ParamStore::clip_grad_norm(double max_norm) {
    double n = grad_norm();
    if (n <= max_norm || n == 0.0) return;
    double f = max_norm / n;
    for (auto& [k, s] : slots_) s.grad *= f;
}

void ParamStore::save(const std::string& path) const {
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, slot] : slots_) {
        nlohmann::json vals = nlohmann::json::array();
        for (Eigen::Index r = 0; r < slot.value.rows(); ++r)
            for (Eigen::Index c = 0; c < slot.value.cols(); ++c) vals.push_back(slot.value(r, c));
        tensors[name] = {{"shape", {slot.value.rows(), slot.value.cols()}},
                         {"values", std::move(vals)}};
    }
    nlohmann::json doc = {{"format", "chainlab-params"}, {"version", 1}, {"tensors", tensors}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << doc.dump(1) << "\n";
}

ParamStore ParamStore::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    nlohmann::json doc = nlohmann::json::parse(in);
    if (doc.value("format", "") != "chainlab-params" || doc.value("version", 0) != 1)
        throw std::runtime_error(path + ": not a chainlab-params v1 file");
    ParamStore store;
    for (const auto& [name, t] : doc.at("tensors").items()) {
        Eigen::Index r = t.at("shape").at(0).get<Eigen::Index>();
        Eigen::Index c = t.at("shape").at(1).get<Eigen::Index>();
        const auto& vals = t.at("values");
        if (static_cast<Eigen::Index>(vals.size()) != r * c)
            throw std::runtime_error(path + ": size mismatch for tensor " + name);
        ParamSlot& s = store.create(name, r, c);
        std::size_t i = 0;
        for (Eigen::Index rr = 0; rr < r; ++rr)
            for (Eigen::Index cc = 0; cc < c; ++cc) s.value(rr, cc) = vals[i++].get<double>();
    }
    return store;
}

void init_uniform(ParamSlot& slot, double bound, std::uint64_t& rng_state) {
    for (Eigen::Index r = 0; r < slot.value.rows(); ++r)
        for (Eigen::Index c = 0; c < slot.value.cols(); ++c)
            slot.value(r, c) = (2.0 * uniform01(rng_state) - 1.0) * bound;
}

void Adam::step(ParamStore& store) {
    store.clip_grad_norm(clip_norm_);
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const std::string& name : store.names()) {
        ParamSlot& s = store.at(name);
        auto& [m, v] = moments_[name];
        if (m.size() == 0) {
            m.setZero(s.value.rows(), s.value.cols());
            v.setZero(s.value.rows(), s.value.cols());
        }
        m = beta1_ * m + (1.0 - beta1_) * s.grad;
        v = beta2_ * v + (1.0 - beta2_) * s.grad.cwiseProduct(s.grad);
        Matrix mhat = m / bc1;
        Matrix vhat = v / bc2;
        s.value -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
    }
    store.zero_grads();
}

}  // namespace chainlab::ad
