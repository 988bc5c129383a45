#include "hysid/tape.hpp"

#include <atomic>
#include <cmath>
#include <string>

namespace hysid {

namespace detail {

thread_local Tape *g_active_tape = nullptr;

void throw_foreign_var(const Var &v) {
    throw InstrumentationError("tape variable #" + std::to_string(v.index()) + " of tape " +
                               std::to_string(v.tape_id()) +
                               " used while that tape is not active on this thread");
}

} // namespace detail

namespace {
std::atomic<std::uint32_t> g_next_tape_id{1};
}

Tape::Tape(std::size_t max_bytes)
    : max_bytes_(max_bytes), id_(g_next_tape_id.fetch_add(1)) {}

Tape::~Tape() {
    if (detail::g_active_tape == this)
        detail::g_active_tape = nullptr;
}

Var Tape::input(double value) { return Var(value, push(TapeOp::Input, value, -1, 0.0, -1, 0.0, 0.0), id_); }

std::vector<Var> Tape::inputs(std::span<const double> values) {
    if (bytes() + values.size() * sizeof(TapeNode) > max_bytes_)
        throw ResourceError("tape memory budget exceeded", bytes() + values.size() * sizeof(TapeNode));
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values) {
        nodes_.push_back(TapeNode{v, 0.0, 0.0, 0.0, -1, -1, TapeOp::Input});
        out.emplace_back(v, static_cast<std::int32_t>(nodes_.size() - 1), id_);
    }
    return out;
}

Var Tape::affine(const Var &bias, std::span<const Var> w, std::span<const Var> a) {
    const std::size_t need = sizeof(TapeNode) + (w.size() + 1) * sizeof(AffineTerm);
    if (bytes() + need > max_bytes_)
        throw ResourceError("tape memory budget exceeded", bytes() + need);
    auto idx = [this](const Var &v) {
        if (v.is_constant())
            return std::int32_t{-1};
        if (v.tape_id() != id_)
            detail::throw_foreign_var(v);
        return v.index();
    };
    const std::size_t offset = terms_.size();
    terms_.resize(offset + w.size() + 1);
    AffineTerm *t = terms_.data() + offset;
    double acc = bias.value();
    t[0] = {idx(bias), -1, acc, 1.0};
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double wv = w[i].value(), av = a[i].value();
        acc = acc + wv * av;
        t[i + 1] = {idx(w[i]), idx(a[i]), wv, av};
    }
    nodes_.push_back(TapeNode{acc, 0.0, 0.0, static_cast<double>(w.size() + 1), static_cast<std::int32_t>(offset), -1,
                              TapeOp::Affine});
    return Var(acc, static_cast<std::int32_t>(nodes_.size() - 1), id_);
}

Var fused_affine(const Var &bias, std::span<const Var> w, std::span<const Var> a) {
    if (w.size() != a.size())
        throw ConfigError("affine operand lengths differ");
    Tape *t = detail::g_active_tape;
    if (t == nullptr) {
        // Only constants can be combined without a tape.
        double acc = bias.value();
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (!w[i].is_constant() || !a[i].is_constant())
                detail::throw_foreign_var(w[i].is_constant() ? a[i] : w[i]);
            acc = acc + w[i].value() * a[i].value();
        }
        if (!bias.is_constant())
            detail::throw_foreign_var(bias);
        return Var(acc);
    }
    return t->affine(bias, w, a);
}

void Tape::rewind(Mark m) {
    if (m.nodes > nodes_.size() || m.terms > terms_.size())
        throw ConfigError("tape mark lies beyond the recorded nodes");
    nodes_.resize(m.nodes);
    terms_.resize(m.terms);
}

void Tape::clear() {
    nodes_.clear();
    terms_.clear();
    // Vars recorded before the clear must not alias new nodes.
    id_ = g_next_tape_id.fetch_add(1);
}

void Tape::backward(std::span<double> adjoint) const {
    if (adjoint.size() != nodes_.size())
        throw ConfigError("adjoint buffer size does not match tape size");
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        const double w = adjoint[i];
        if (w == 0.0)
            continue;
        const TapeNode &n = nodes_[i];
        if (n.op == TapeOp::Affine) {
            const AffineTerm *t = terms_.data() + n.a;
            const auto count = static_cast<std::size_t>(n.c);
            for (std::size_t k = 0; k < count; ++k) {
                if (t[k].x >= 0)
                    adjoint[static_cast<std::size_t>(t[k].x)] += w * t[k].yv;
                if (t[k].y >= 0)
                    adjoint[static_cast<std::size_t>(t[k].y)] += w * t[k].xv;
            }
            continue;
        }
        if (n.a >= 0)
            adjoint[static_cast<std::size_t>(n.a)] += w * n.da;
        if (n.b >= 0)
            adjoint[static_cast<std::size_t>(n.b)] += w * n.db;
    }
}

std::vector<double> Tape::gradient(const Var &output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (!output.is_constant()) {
        if (output.tape_id() != id_)
            detail::throw_foreign_var(output);
        adj[static_cast<std::size_t>(output.index())] = 1.0;
        backward(adj);
    }
    return adj;
}

std::vector<double> Tape::replay() const {
    std::vector<double> v(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const TapeNode &n = nodes_[i];
        if (n.op == TapeOp::Affine) {
            const AffineTerm *t = terms_.data() + n.a;
            auto val = [&](std::int32_t idx, double c) { return idx >= 0 ? v[static_cast<std::size_t>(idx)] : c; };
            double acc = val(t[0].x, t[0].xv);
            for (std::size_t k = 1; k < static_cast<std::size_t>(n.c); ++k)
                acc = acc + val(t[k].x, t[k].xv) * val(t[k].y, t[k].yv);
            v[i] = acc;
            continue;
        }
        const double a = n.a >= 0 ? v[static_cast<std::size_t>(n.a)] : 0.0;
        const double b = n.b >= 0 ? v[static_cast<std::size_t>(n.b)] : 0.0;
        switch (n.op) {
        case TapeOp::Input: v[i] = n.value; break;
        case TapeOp::Add: v[i] = a + b; break;
        case TapeOp::Sub: v[i] = a - b; break;
        case TapeOp::Mul: v[i] = a * b; break;
        case TapeOp::Div: v[i] = a / b; break;
        case TapeOp::Neg: v[i] = -a; break;
        case TapeOp::AddConst: v[i] = a + n.c; break;
        case TapeOp::SubConst: v[i] = a - n.c; break;
        case TapeOp::ConstSub: v[i] = n.c - a; break;
        case TapeOp::MulConst: v[i] = a * n.c; break;
        case TapeOp::DivConst: v[i] = a / n.c; break;
        case TapeOp::ConstDiv: v[i] = n.c / a; break;
        case TapeOp::Sin: v[i] = std::sin(a); break;
        case TapeOp::Cos: v[i] = std::cos(a); break;
        case TapeOp::Tan: v[i] = std::tan(a); break;
        case TapeOp::Sqrt: v[i] = std::sqrt(a); break;
        case TapeOp::Abs: v[i] = std::abs(a); break;
        case TapeOp::Exp: v[i] = std::exp(a); break;
        case TapeOp::Affine: break;
        }
    }
    return v;
}

ActiveTape::ActiveTape(Tape &tape) : previous_(detail::g_active_tape) { detail::g_active_tape = &tape; }

ActiveTape::~ActiveTape() { detail::g_active_tape = previous_; }

} // namespace hysid
