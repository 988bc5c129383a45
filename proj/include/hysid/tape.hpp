#pragma once

// Reverse-mode tape. Every elementary operation on a `Var` that depends on a
// registered input appends one node holding its value, its local partials and
// enough information (op code, constant operand) to be replayed.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hysid/errors.hpp"

namespace hysid {

enum class TapeOp : std::uint8_t {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddConst,  // a + c
    SubConst,  // a - c
    ConstSub,  // c - a
    MulConst,  // a * c
    DivConst,  // a / c
    ConstDiv,  // c / a
    Sin,
    Cos,
    Tan,
    Sqrt,
    Abs,
    Exp,
    Affine, // b + Σ wᵢ·aᵢ; operands live in the tape's term list
};

struct TapeNode {
    double value;
    double da; // ∂node/∂a
    double db; // ∂node/∂b
    double c;  // constant operand, if any
    std::int32_t a;
    std::int32_t b;
    TapeOp op;
};

/// One product wᵢ·aᵢ of an Affine node; index -1 marks a constant factor.
struct AffineTerm {
    std::int32_t x;
    std::int32_t y;
    double xv;
    double yv;
};

class Var;

class Tape {
  public:
    static constexpr std::size_t kDefaultBudgetBytes = std::size_t{2} << 30;

    explicit Tape(std::size_t max_bytes = kDefaultBudgetBytes);
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;
    ~Tape();

    /// Registers an independent variable.
    Var input(double value);
    std::vector<Var> inputs(std::span<const double> values);

    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t bytes() const noexcept {
        return nodes_.size() * sizeof(TapeNode) + terms_.size() * sizeof(AffineTerm);
    }
    std::uint32_t id() const noexcept { return id_; }
    const std::vector<TapeNode> &nodes() const noexcept { return nodes_; }

    /// Drops all nodes; capacity is kept. Vars created before are invalidated.
    void clear();

    struct Mark {
        std::size_t nodes = 0;
        std::size_t terms = 0;
    };
    Mark mark() const noexcept { return {nodes_.size(), terms_.size()}; }

    /// Drops the nodes recorded after `m`. Vars created after the mark must not
    /// be used again; unlike clear() this is not detected.
    void rewind(Mark m);

    /// Reverse sweep. `adjoint` has one entry per node, seeded by the caller,
    /// and holds the accumulated adjoints on return.
    void backward(std::span<double> adjoint) const;

    /// Adjoints of every node for d(output)/d(node).
    std::vector<double> gradient(const Var &output) const;

    /// Recomputes every node value from the inputs in recording order.
    std::vector<double> replay() const;

    /// Tape receiving operations on the calling thread (may be null).
    static Tape *active() noexcept;

    std::int32_t push(TapeOp op, double value, std::int32_t a, double da, std::int32_t b,
                      double db, double c);

    /// Records bias + Σ w[i]·a[i] as one Affine node.
    Var affine(const Var &bias, std::span<const Var> w, std::span<const Var> a);

  private:
    friend class ActiveTape;
    std::vector<TapeNode> nodes_;
    std::vector<AffineTerm> terms_;
    std::size_t max_bytes_;
    std::uint32_t id_;
};

/// RAII activation of a tape on the current thread.
class ActiveTape {
  public:
    explicit ActiveTape(Tape &tape);
    ActiveTape(const ActiveTape &) = delete;
    ActiveTape &operator=(const ActiveTape &) = delete;
    ~ActiveTape();

  private:
    Tape *previous_;
};

/// Tape-tracked scalar. Index -1 marks a constant that never touches the tape.
class Var {
  public:
    Var() = default;
    Var(double value) : v_(value) {} // NOLINT: implicit lift of constants
    Var(double value, std::int32_t index, std::uint32_t tape) : v_(value), idx_(index), tape_(tape) {}

    double value() const noexcept { return v_; }
    std::int32_t index() const noexcept { return idx_; }
    std::uint32_t tape_id() const noexcept { return tape_; }
    bool is_constant() const noexcept { return idx_ < 0; }

    Var &operator+=(const Var &o) { return *this = *this + o; }
    Var &operator-=(const Var &o) { return *this = *this - o; }
    Var &operator*=(const Var &o) { return *this = *this * o; }
    Var &operator/=(const Var &o) { return *this = *this / o; }

    friend Var operator+(const Var &a, const Var &b);
    friend Var operator-(const Var &a, const Var &b);
    friend Var operator*(const Var &a, const Var &b);
    friend Var operator/(const Var &a, const Var &b);
    friend Var operator-(const Var &a);
    friend Var operator+(const Var &a, double b);
    friend Var operator+(double a, const Var &b);
    friend Var operator-(const Var &a, double b);
    friend Var operator-(double a, const Var &b);
    friend Var operator*(const Var &a, double b);
    friend Var operator*(double a, const Var &b);
    friend Var operator/(const Var &a, double b);
    friend Var operator/(double a, const Var &b);
    friend Var sin(const Var &a);
    friend Var cos(const Var &a);
    friend Var tan(const Var &a);
    friend Var sqrt(const Var &a);
    friend Var abs(const Var &a);
    friend Var exp(const Var &a);

  private:
    double v_ = 0.0;
    std::int32_t idx_ = -1;
    std::uint32_t tape_ = 0;
};

inline double value_of(const Var &x) noexcept { return x.value(); }

namespace detail {

extern thread_local Tape *g_active_tape;

[[noreturn]] void throw_foreign_var(const Var &v);

inline Tape &tape_for(const Var &v) {
    Tape *t = g_active_tape;
    if (t == nullptr || t->id() != v.tape_id())
        throw_foreign_var(v);
    return *t;
}

inline Tape &tape_for(const Var &a, const Var &b) {
    Tape &t = tape_for(a);
    if (b.tape_id() != a.tape_id())
        throw_foreign_var(b);
    return t;
}

inline Var unary(const Var &a, TapeOp op, double value, double slope, double c = 0.0) {
    if (a.is_constant())
        return Var(value);
    Tape &t = tape_for(a);
    return Var(value, t.push(op, value, a.index(), slope, -1, 0.0, c), t.id());
}

inline Var binary(const Var &a, const Var &b, TapeOp op, double value, double da, double db) {
    Tape &t = tape_for(a, b);
    return Var(value, t.push(op, value, a.index(), da, b.index(), db, 0.0), t.id());
}

} // namespace detail

inline Tape *Tape::active() noexcept { return detail::g_active_tape; }

inline std::int32_t Tape::push(TapeOp op, double value, std::int32_t a, double da, std::int32_t b,
                               double db, double c) {
    if (bytes() + sizeof(TapeNode) > max_bytes_)
        throw ResourceError("tape memory budget exceeded", bytes() + sizeof(TapeNode));
    nodes_.push_back(TapeNode{value, da, db, c, a, b, op});
    return static_cast<std::int32_t>(nodes_.size() - 1);
}

/// bias + Σ w[i]·a[i], accumulated left to right exactly like the scalar loop
/// it replaces, recorded as a single node.
Var fused_affine(const Var &bias, std::span<const Var> w, std::span<const Var> a);

inline Var operator+(const Var &a, const Var &b) {
    const double v = a.v_ + b.v_;
    if (a.is_constant())
        return b.is_constant() ? Var(v) : detail::unary(b, TapeOp::AddConst, v, 1.0, a.v_);
    if (b.is_constant())
        return detail::unary(a, TapeOp::AddConst, v, 1.0, b.v_);
    return detail::binary(a, b, TapeOp::Add, v, 1.0, 1.0);
}

inline Var operator-(const Var &a, const Var &b) {
    const double v = a.v_ - b.v_;
    if (a.is_constant())
        return b.is_constant() ? Var(v) : detail::unary(b, TapeOp::ConstSub, v, -1.0, a.v_);
    if (b.is_constant())
        return detail::unary(a, TapeOp::SubConst, v, 1.0, b.v_);
    return detail::binary(a, b, TapeOp::Sub, v, 1.0, -1.0);
}

inline Var operator*(const Var &a, const Var &b) {
    const double v = a.v_ * b.v_;
    if (a.is_constant())
        return b.is_constant() ? Var(v) : detail::unary(b, TapeOp::MulConst, v, a.v_, a.v_);
    if (b.is_constant())
        return detail::unary(a, TapeOp::MulConst, v, b.v_, b.v_);
    return detail::binary(a, b, TapeOp::Mul, v, b.v_, a.v_);
}

inline Var operator/(const Var &a, const Var &b) {
    const double v = a.v_ / b.v_;
    if (b.is_constant())
        return a.is_constant() ? Var(v) : detail::unary(a, TapeOp::DivConst, v, 1.0 / b.v_, b.v_);
    if (a.is_constant())
        return detail::unary(b, TapeOp::ConstDiv, v, -v / b.v_, a.v_);
    return detail::binary(a, b, TapeOp::Div, v, 1.0 / b.v_, -v / b.v_);
}

inline Var operator-(const Var &a) { return detail::unary(a, TapeOp::Neg, -a.v_, -1.0); }

inline Var operator+(const Var &a, double b) { return detail::unary(a, TapeOp::AddConst, a.v_ + b, 1.0, b); }
inline Var operator+(double a, const Var &b) { return detail::unary(b, TapeOp::AddConst, a + b.v_, 1.0, a); }
inline Var operator-(const Var &a, double b) { return detail::unary(a, TapeOp::SubConst, a.v_ - b, 1.0, b); }
inline Var operator-(double a, const Var &b) { return detail::unary(b, TapeOp::ConstSub, a - b.v_, -1.0, a); }
inline Var operator*(const Var &a, double b) { return detail::unary(a, TapeOp::MulConst, a.v_ * b, b, b); }
inline Var operator*(double a, const Var &b) { return detail::unary(b, TapeOp::MulConst, a * b.v_, a, a); }
inline Var operator/(const Var &a, double b) { return detail::unary(a, TapeOp::DivConst, a.v_ / b, 1.0 / b, b); }
inline Var operator/(double a, const Var &b) {
    const double v = a / b.v_;
    return detail::unary(b, TapeOp::ConstDiv, v, -v / b.v_, a);
}

inline Var sin(const Var &a) { return detail::unary(a, TapeOp::Sin, std::sin(a.v_), std::cos(a.v_)); }
inline Var cos(const Var &a) { return detail::unary(a, TapeOp::Cos, std::cos(a.v_), -std::sin(a.v_)); }
inline Var tan(const Var &a) {
    const double t = std::tan(a.v_);
    return detail::unary(a, TapeOp::Tan, t, 1.0 + t * t);
}
inline Var sqrt(const Var &a) {
    const double s = std::sqrt(a.v_);
    return detail::unary(a, TapeOp::Sqrt, s, 0.5 / s);
}
inline Var abs(const Var &a) {
    const double s = a.v_ > 0.0 ? 1.0 : (a.v_ < 0.0 ? -1.0 : 0.0);
    return detail::unary(a, TapeOp::Abs, std::abs(a.v_), s);
}
inline Var exp(const Var &a) {
    const double e = std::exp(a.v_);
    return detail::unary(a, TapeOp::Exp, e, e);
}

} // namespace hysid
