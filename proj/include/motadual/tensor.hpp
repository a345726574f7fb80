// Dense 2-D tensors with reverse-mode automatic differentiation.
//
// Tensors are cheap handles onto shared nodes. Ops record a backward rule on
// the innermost active Tape whenever any input requires gradients; with no
// active tape every op is a pure forward evaluation. float is the training
// dtype, double exists for finite-difference verification.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "motadual/common.hpp"

namespace motadual {

template <typename T>
using EigenMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EigenMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const EigenMat<T>>;

namespace detail {

template <typename T>
struct TensorNode {
    int rows = 0;
    int cols = 0;
    std::vector<T> value;
    std::vector<T> grad;  // allocated on first accumulation
    bool requires_grad = false;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(rows) * cols;
    }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(int rows, int cols, bool requires_grad = false) {
        return filled(rows, cols, T(0), requires_grad);
    }

    static Tensor filled(int rows, int cols, T v, bool requires_grad = false) {
        check_dims(rows, cols);
        Tensor t;
        t.node_ = std::make_shared<detail::TensorNode<T>>();
        t.node_->rows = rows;
        t.node_->cols = cols;
        t.node_->value.assign(static_cast<std::size_t>(rows) * cols, v);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from(std::vector<T> data, int rows, int cols,
                       bool requires_grad = false) {
        check_dims(rows, cols);
        if (data.size() != static_cast<std::size_t>(rows) * cols)
            throw DimensionError("tensor data length does not match shape");
        Tensor t;
        t.node_ = std::make_shared<detail::TensorNode<T>>();
        t.node_->rows = rows;
        t.node_->cols = cols;
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from({v}, 1, 1, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    int rows() const { return node_->rows; }
    int cols() const { return node_->cols; }
    std::int64_t numel() const { return node_->numel(); }

    const std::vector<T>& values() const { return node_->value; }
    std::vector<T>& values() { return node_->value; }

    T at(int r, int c) const {
        return node_->value[static_cast<std::size_t>(r) * cols() + c];
    }
    T& at(int r, int c) {
        return node_->value[static_cast<std::size_t>(r) * cols() + c];
    }

    T item() const {
        if (numel() != 1) throw ContractError("item() requires a 1x1 tensor");
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    // Gradient accumulated by the last backward passes; zeros if none ran.
    const std::vector<T>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty())
            std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    ConstMatMap<T> map() const {
        return ConstMatMap<T>(node_->value.data(), rows(), cols());
    }
    MatMap<T> map() {
        return MatMap<T>(node_->value.data(), rows(), cols());
    }

    std::shared_ptr<detail::TensorNode<T>> node() const { return node_; }

private:
    static void check_dims(int rows, int cols) {
        if (rows <= 0 || cols <= 0)
            throw DimensionError("tensor dimensions must be positive");
    }

    std::shared_ptr<detail::TensorNode<T>> node_;
};

// Records backward rules in execution order; backward replays them once in
// reverse. Construction activates the tape for the current thread (innermost
// wins), destruction restores the previous one.
template <typename T>
class Tape {
public:
    Tape() : prev_(active_) { active_ = this; }
    ~Tape() { active_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

    std::size_t size() const { return steps_.size(); }
    bool consumed() const { return consumed_; }

    void backward(const Tensor<T>& root) {
        if (consumed_)
            throw ContractError("backward called on an already-consumed graph");
        if (root.numel() != 1)
            throw ContractError("backward root must be a scalar (1x1) tensor");
        if (!root.requires_grad())
            throw ContractError("backward root is not connected to any parameter");
        consumed_ = true;
        root.node()->ensure_grad();
        root.node()->grad[0] += T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    // Temporarily disables recording (used by finite-difference evaluation).
    class Suspend {
    public:
        Suspend() : prev_(active_) { active_ = nullptr; }
        ~Suspend() { active_ = prev_; }
        Suspend(const Suspend&) = delete;
        Suspend& operator=(const Suspend&) = delete;

    private:
        Tape* prev_;
    };

private:
    std::vector<std::function<void()>> steps_;
    Tape* prev_ = nullptr;
    bool consumed_ = false;
    static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

namespace detail {

template <typename T>
bool tracked(std::initializer_list<Tensor<T>> inputs) {
    if (Tape<T>::active() == nullptr) return false;
    for (const auto& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

template <typename T>
Tensor<T> make_output(int rows, int cols, bool tracked_out) {
    Tensor<T> out = Tensor<T>::zeros(rows, cols);
    out.set_requires_grad(tracked_out);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Op catalogue. Each op validates shapes, computes the forward value, and
// records a backward rule when tracked.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
    const int am = trans_a ? a.cols() : a.rows();
    const int ak = trans_a ? a.rows() : a.cols();
    const int bk = trans_b ? b.cols() : b.rows();
    const int bn = trans_b ? b.rows() : b.cols();
    if (ak != bk) {
        std::ostringstream os;
        os << "matmul inner dimensions differ: " << ak << " vs " << bk;
        throw DimensionError(os.str());
    }
    const bool tr = detail::tracked<T>({a, b});
    Tensor<T> out = detail::make_output<T>(am, bn, tr);
    if (!trans_a && !trans_b)
        out.map().noalias() = a.map() * b.map();
    else if (trans_a && !trans_b)
        out.map().noalias() = a.map().transpose() * b.map();
    else if (!trans_a && trans_b)
        out.map().noalias() = a.map() * b.map().transpose();
    else
        out.map().noalias() = a.map().transpose() * b.map().transpose();

    if (tr) {
        auto an = a.node(), bn_ = b.node(), on = out.node();
        Tape<T>::active()->record([an, bn_, on, trans_a, trans_b] {
            ConstMatMap<T> g(on->grad.data(), on->rows, on->cols);
            ConstMatMap<T> av(an->value.data(), an->rows, an->cols);
            ConstMatMap<T> bv(bn_->value.data(), bn_->rows, bn_->cols);
            if (an->requires_grad) {
                an->ensure_grad();
                MatMap<T> ga(an->grad.data(), an->rows, an->cols);
                if (!trans_a && !trans_b)
                    ga.noalias() += g * bv.transpose();
                else if (trans_a && !trans_b)
                    ga.noalias() += bv * g.transpose();
                else if (!trans_a && trans_b)
                    ga.noalias() += g * bv;
                else
                    ga.noalias() += bv.transpose() * g.transpose();
            }
            if (bn_->requires_grad) {
                bn_->ensure_grad();
                MatMap<T> gb(bn_->grad.data(), bn_->rows, bn_->cols);
                if (!trans_a && !trans_b)
                    gb.noalias() += av.transpose() * g;
                else if (trans_a && !trans_b)
                    gb.noalias() += av * g;
                else if (!trans_a && trans_b)
                    gb.noalias() += g.transpose() * av;
                else
                    gb.noalias() += g.transpose() * av.transpose();
            }
        });
    }
    return out;
}

// add supports equal shapes, a (1 x c) row broadcast over rows, and a (1 x 1)
// scalar broadcast.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const bool same = a.rows() == b.rows() && a.cols() == b.cols();
    const bool row = b.rows() == 1 && b.cols() == a.cols();
    const bool scal = b.numel() == 1;
    if (!same && !row && !scal)
        throw DimensionError("add: incompatible shapes");
    const bool tr = detail::tracked<T>({a, b});
    Tensor<T> out = detail::make_output<T>(a.rows(), a.cols(), tr);
    if (same)
        out.map() = a.map() + b.map();
    else if (row)
        out.map() = a.map().rowwise() + b.map().row(0);
    else
        out.map() = a.map().array() + b.values()[0];

    if (tr) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape<T>::active()->record([an, bn, on, same, row] {
            ConstMatMap<T> g(on->grad.data(), on->rows, on->cols);
            if (an->requires_grad) {
                an->ensure_grad();
                MatMap<T>(an->grad.data(), an->rows, an->cols) += g;
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (same)
                    MatMap<T>(bn->grad.data(), bn->rows, bn->cols) += g;
                else if (row)
                    MatMap<T>(bn->grad.data(), 1, bn->cols) +=
                        g.colwise().sum();
                else
                    bn->grad[0] += g.sum();
            }
        });
    }
    return out;
}

// Elementwise product; either operand may be a (1 x 1) scalar broadcast.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const bool same = a.rows() == b.rows() && a.cols() == b.cols();
    const bool b_scal = b.numel() == 1;
    const bool a_scal = a.numel() == 1;
    if (!same && !b_scal && !a_scal)
        throw DimensionError("mul: incompatible shapes");
    const int rows = a_scal && !same ? b.rows() : a.rows();
    const int cols = a_scal && !same ? b.cols() : a.cols();
    const bool tr = detail::tracked<T>({a, b});
    Tensor<T> out = detail::make_output<T>(rows, cols, tr);
    if (same)
        out.map() = a.map().cwiseProduct(b.map());
    else if (b_scal)
        out.map() = a.map() * b.values()[0];
    else
        out.map() = b.map() * a.values()[0];

    if (tr) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Tape<T>::active()->record([an, bn, on, same, b_scal] {
            ConstMatMap<T> g(on->grad.data(), on->rows, on->cols);
            ConstMatMap<T> av(an->value.data(), an->rows, an->cols);
            ConstMatMap<T> bv(bn->value.data(), bn->rows, bn->cols);
            if (an->requires_grad) {
                an->ensure_grad();
                MatMap<T> ga(an->grad.data(), an->rows, an->cols);
                if (same)
                    ga += g.cwiseProduct(bv);
                else if (b_scal)
                    ga += g * bn->value[0];
                else
                    an->grad[0] += g.cwiseProduct(bv).sum();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                MatMap<T> gb(bn->grad.data(), bn->rows, bn->cols);
                if (same)
                    gb += g.cwiseProduct(av);
                else if (b_scal)
                    bn->grad[0] += g.cwiseProduct(av).sum();
                else
                    gb += g * an->value[0];
            }
        });
    }
    return out;
}

// Multiplication by a compile-time constant (not a learnable scalar).
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    const bool tr = detail::tracked<T>({a});
    Tensor<T> out = detail::make_output<T>(a.rows(), a.cols(), tr);
    out.map() = a.map() * c;
    if (tr) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record([an, on, c] {
            if (!an->requires_grad) return;
            an->ensure_grad();
            MatMap<T>(an->grad.data(), an->rows, an->cols) +=
                ConstMatMap<T>(on->grad.data(), on->rows, on->cols) * c;
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, scale(b, T(-1)));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    if (axis != 0 && axis != 1) throw DimensionError("concat axis out of range");
    const int fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
    int total = 0;
    bool any_rg = false;
    for (const auto& p : parts) {
        const int f = axis == 0 ? p.cols() : p.rows();
        if (f != fixed) throw DimensionError("concat: mismatched shapes");
        total += axis == 0 ? p.rows() : p.cols();
        any_rg = any_rg || p.requires_grad();
    }
    const bool tr = Tape<T>::active() != nullptr && any_rg;
    Tensor<T> out = axis == 0 ? detail::make_output<T>(total, fixed, tr)
                              : detail::make_output<T>(fixed, total, tr);
    int off = 0;
    for (const auto& p : parts) {
        if (axis == 0) {
            out.map().middleRows(off, p.rows()) = p.map();
            off += p.rows();
        } else {
            out.map().middleCols(off, p.cols()) = p.map();
            off += p.cols();
        }
    }
    if (tr) {
        std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
        nodes.reserve(parts.size());
        for (const auto& p : parts) nodes.push_back(p.node());
        auto on = out.node();
        Tape<T>::active()->record([nodes, on, axis] {
            ConstMatMap<T> g(on->grad.data(), on->rows, on->cols);
            int off = 0;
            for (const auto& n : nodes) {
                const int len = axis == 0 ? n->rows : n->cols;
                if (n->requires_grad) {
                    n->ensure_grad();
                    MatMap<T> gn(n->grad.data(), n->rows, n->cols);
                    if (axis == 0)
                        gn += g.middleRows(off, len);
                    else
                        gn += g.middleCols(off, len);
                }
                off += len;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int start, int count) {
    if (axis != 0 && axis != 1) throw DimensionError("slice axis out of range");
    const int extent = axis == 0 ? a.rows() : a.cols();
    if (start < 0 || count <= 0 || start + count > extent)
        throw DimensionError("slice range out of bounds");
    const bool tr = detail::tracked<T>({a});
    Tensor<T> out = axis == 0 ? detail::make_output<T>(count, a.cols(), tr)
                              : detail::make_output<T>(a.rows(), count, tr);
    if (axis == 0)
        out.map() = a.map().middleRows(start, count);
    else
        out.map() = a.map().middleCols(start, count);
    if (tr) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record([an, on, axis, start, count] {
            if (!an->requires_grad) return;
            an->ensure_grad();
            ConstMatMap<T> g(on->grad.data(), on->rows, on->cols);
            MatMap<T> ga(an->grad.data(), an->rows, an->cols);
            if (axis == 0)
                ga.middleRows(start, count) += g;
            else
                ga.middleCols(start, count) += g;
        });
    }
    return out;
}

// Row gather: out[i] = table[ids[i]]. Backward scatter-adds into the table.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
    if (ids.empty()) throw ContractError("embedding lookup of zero ids");
    for (int id : ids)
        if (id < 0 || id >= table.rows())
            throw DimensionError("embedding id out of vocabulary range");
    const bool tr = detail::tracked<T>({table});
    Tensor<T> out =
        detail::make_output<T>(static_cast<int>(ids.size()), table.cols(), tr);
    for (std::size_t i = 0; i < ids.size(); ++i)
        out.map().row(static_cast<int>(i)) = table.map().row(ids[i]);
    if (tr) {
        auto tn = table.node(), on = out.node();
        Tape<T>::active()->record([tn, on, ids] {
            if (!tn->requires_grad) return;
            tn->ensure_grad();
            ConstMatMap<T> g(on->grad.data(), on->rows, on->cols);
            MatMap<T> gt(tn->grad.data(), tn->rows, tn->cols);
            for (std::size_t i = 0; i < ids.size(); ++i)
                gt.row(ids[i]) += g.row(static_cast<int>(i));
        });
    }
    return out;
}

namespace detail {

template <typename T, typename Fn>
void for_each_lane(int rows, int cols, int axis, Fn&& fn) {
    // axis is the reduction axis: axis=1 iterates rows, axis=0 iterates cols.
    if (axis == 1)
        for (int r = 0; r < rows; ++r) fn(r);
    else
        for (int c = 0; c < cols; ++c) fn(c);
}

}  // namespace detail

// Numerically-stable softmax along the given axis (1 = within each row).
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    if (axis != 0 && axis != 1) throw DimensionError("softmax axis out of range");
    const bool tr = detail::tracked<T>({a});
    Tensor<T> out = detail::make_output<T>(a.rows(), a.cols(), tr);
    auto av = a.map();
    auto ov = out.map();
    detail::for_each_lane<T>(a.rows(), a.cols(), axis, [&](int i) {
        auto lane_in = axis == 1 ? av.row(i).transpose().eval()
                                 : av.col(i).eval();
        const T mx = lane_in.maxCoeff();
        Eigen::Matrix<T, Eigen::Dynamic, 1> e =
            (lane_in.array() - mx).exp().matrix();
        e /= e.sum();
        if (axis == 1)
            ov.row(i) = e.transpose();
        else
            ov.col(i) = e;
    });
    if (tr) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record([an, on, axis] {
            if (!an->requires_grad) return;
            an->ensure_grad();
            ConstMatMap<T> g(on->grad.data(), on->rows, on->cols);
            ConstMatMap<T> y(on->value.data(), on->rows, on->cols);
            MatMap<T> ga(an->grad.data(), an->rows, an->cols);
            detail::for_each_lane<T>(on->rows, on->cols, axis, [&](int i) {
                if (axis == 1) {
                    const T dot = g.row(i).cwiseProduct(y.row(i)).sum();
                    ga.row(i) +=
                        y.row(i).cwiseProduct(g.row(i).array().matrix() -
                                              Eigen::Matrix<T, 1, Eigen::Dynamic>::
                                                  Constant(1, y.cols(), dot));
                } else {
                    const T dot = g.col(i).cwiseProduct(y.col(i)).sum();
                    ga.col(i) += y.col(i).cwiseProduct(
                        g.col(i) - Eigen::Matrix<T, Eigen::Dynamic, 1>::Constant(
                                       y.rows(), dot));
                }
            });
        });
    }
    return out;
}

// log(softmax(a)) computed without forming intermediate zeros.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, int axis) {
    if (axis != 0 && axis != 1)
        throw DimensionError("log_softmax axis out of range");
    const bool tr = detail::tracked<T>({a});
    Tensor<T> out = detail::make_output<T>(a.rows(), a.cols(), tr);
    auto av = a.map();
    auto ov = out.map();
    detail::for_each_lane<T>(a.rows(), a.cols(), axis, [&](int i) {
        auto lane_in = axis == 1 ? av.row(i).transpose().eval()
                                 : av.col(i).eval();
        const T mx = lane_in.maxCoeff();
        const T lse =
            std::log((lane_in.array() - mx).exp().sum()) + mx;
        if (axis == 1)
            ov.row(i) = (av.row(i).array() - lse).matrix();
        else
            ov.col(i) = (av.col(i).array() - lse).matrix();
    });
    if (tr) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record([an, on, axis] {
            if (!an->requires_grad) return;
            an->ensure_grad();
            ConstMatMap<T> g(on->grad.data(), on->rows, on->cols);
            ConstMatMap<T> ly(on->value.data(), on->rows, on->cols);
            MatMap<T> ga(an->grad.data(), an->rows, an->cols);
            detail::for_each_lane<T>(on->rows, on->cols, axis, [&](int i) {
                if (axis == 1) {
                    const T gsum = g.row(i).sum();
                    ga.row(i) += g.row(i) -
                                 (ly.row(i).array().exp() * gsum).matrix();
                } else {
                    const T gsum = g.col(i).sum();
                    ga.col(i) += g.col(i) -
                                 (ly.col(i).array().exp() * gsum).matrix();
                }
            });
        });
    }
    return out;
}

// Per-row layer normalization with learnable gain and bias (both 1 x d).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5)) {
    if (gain.rows() != 1 || bias.rows() != 1 || gain.cols() != x.cols() ||
        bias.cols() != x.cols())
        throw DimensionError("layer_norm: gain/bias must be 1 x cols");
    const bool tr = detail::tracked<T>({x, gain, bias});
    const int d = x.cols();
    Tensor<T> out = detail::make_output<T>(x.rows(), d, tr);
    // Cache normalized rows and inverse stddev for the backward rule.
    auto xhat = std::make_shared<std::vector<T>>(x.values().size());
    auto inv_std = std::make_shared<std::vector<T>>(x.rows());
    for (int r = 0; r < x.rows(); ++r) {
        auto row = x.map().row(r);
        const T mean = row.mean();
        const T var = (row.array() - mean).square().sum() / T(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (int c = 0; c < d; ++c) {
            const T h = (x.at(r, c) - mean) * is;
            (*xhat)[static_cast<std::size_t>(r) * d + c] = h;
            out.at(r, c) = h * gain.values()[c] + bias.values()[c];
        }
    }
    if (tr) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node(),
             on = out.node();
        Tape<T>::active()->record([xn, gn, bn, on, xhat, inv_std, d] {
            ConstMatMap<T> g(on->grad.data(), on->rows, on->cols);
            ConstMatMap<T> h(xhat->data(), on->rows, on->cols);
            if (gn->requires_grad) {
                gn->ensure_grad();
                MatMap<T>(gn->grad.data(), 1, d) +=
                    g.cwiseProduct(h).colwise().sum();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                MatMap<T>(bn->grad.data(), 1, d) += g.colwise().sum();
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                MatMap<T> gx(xn->grad.data(), xn->rows, xn->cols);
                ConstMatMap<T> gv(gn->value.data(), 1, d);
                for (int r = 0; r < on->rows; ++r) {
                    // dL/dxhat for the row
                    Eigen::Matrix<T, 1, Eigen::Dynamic> gh =
                        g.row(r).cwiseProduct(gv.row(0));
                    const T m1 = gh.mean();
                    const T m2 = gh.cwiseProduct(h.row(r)).mean();
                    gx.row(r) += ((gh.array() - m1) - h.row(r).array() * m2)
                                     .matrix() *
                                 (*inv_std)[r];
                }
            }
        });
    }
    return out;
}

// Exact gelu: x * Phi(x) with the Gaussian CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    const bool tr = detail::tracked<T>({a});
    Tensor<T> out = detail::make_output<T>(a.rows(), a.cols(), tr);
    const T inv_sqrt2 = T(0.7071067811865475244);
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        const T x = a.values()[i];
        out.values()[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
    }
    if (tr) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record([an, on, inv_sqrt2] {
            if (!an->requires_grad) return;
            an->ensure_grad();
            const T inv_sqrt2pi = T(0.3989422804014326779);
            for (std::size_t i = 0; i < an->value.size(); ++i) {
                const T x = an->value[i];
                const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
                const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
                an->grad[i] += on->grad[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

// Normalizes each lane along the axis to unit l2 norm (axis 1 = rows).
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& a, int axis = 1) {
    if (axis != 0 && axis != 1)
        throw DimensionError("l2_normalize axis out of range");
    const bool tr = detail::tracked<T>({a});
    Tensor<T> out = detail::make_output<T>(a.rows(), a.cols(), tr);
    auto norms = std::make_shared<std::vector<T>>(
        static_cast<std::size_t>(axis == 1 ? a.rows() : a.cols()));
    auto av = a.map();
    auto ov = out.map();
    detail::for_each_lane<T>(a.rows(), a.cols(), axis, [&](int i) {
        const T n = axis == 1 ? av.row(i).norm() : av.col(i).norm();
        if (n < T(1e-12))
            throw NumericError("l2_normalize: degenerate all-zero input");
        (*norms)[i] = n;
        if (axis == 1)
            ov.row(i) = av.row(i) / n;
        else
            ov.col(i) = av.col(i) / n;
    });
    if (tr) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record([an, on, norms, axis] {
            if (!an->requires_grad) return;
            an->ensure_grad();
            ConstMatMap<T> g(on->grad.data(), on->rows, on->cols);
            ConstMatMap<T> y(on->value.data(), on->rows, on->cols);
            MatMap<T> ga(an->grad.data(), an->rows, an->cols);
            detail::for_each_lane<T>(on->rows, on->cols, axis, [&](int i) {
                if (axis == 1) {
                    const T dot = g.row(i).cwiseProduct(y.row(i)).sum();
                    ga.row(i) += (g.row(i) - y.row(i) * dot) / (*norms)[i];
                } else {
                    const T dot = g.col(i).cwiseProduct(y.col(i)).sum();
                    ga.col(i) += (g.col(i) - y.col(i) * dot) / (*norms)[i];
                }
            });
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    const bool tr = detail::tracked<T>({a});
    Tensor<T> out = detail::make_output<T>(1, 1, tr);
    out.values()[0] = a.map().sum();
    if (tr) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record([an, on] {
            if (!an->requires_grad) return;
            an->ensure_grad();
            const T g = on->grad[0];
            for (auto& v : an->grad) v += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    const bool tr = detail::tracked<T>({a});
    Tensor<T> out = detail::make_output<T>(a.rows(), a.cols(), tr);
    for (std::size_t i = 0; i < a.values().size(); ++i)
        out.values()[i] = std::log(a.values()[i]);
    if (tr) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record([an, on] {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < an->value.size(); ++i)
                an->grad[i] += on->grad[i] / an->value[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    const bool tr = detail::tracked<T>({a});
    Tensor<T> out = detail::make_output<T>(a.rows(), a.cols(), tr);
    for (std::size_t i = 0; i < a.values().size(); ++i)
        out.values()[i] = std::exp(a.values()[i]);
    if (tr) {
        auto an = a.node(), on = out.node();
        Tape<T>::active()->record([an, on] {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < an->value.size(); ++i)
                an->grad[i] += on->grad[i] * on->value[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker. `f` must be a pure function of the
// current parameter values. Returns the worst relative error over all
// parameter entries.
// ---------------------------------------------------------------------------

template <typename T>
double grad_check(const std::function<Tensor<T>()>& f,
                  std::vector<Tensor<T>> params, T epsilon) {
    if (epsilon <= T(0)) throw ContractError("grad_check: epsilon must be > 0");
    std::vector<std::vector<T>> analytic;
    {
        Tape<T> tape;
        Tensor<T> y = f();
        if (!std::isfinite(static_cast<double>(y.item())))
            throw NumericError("grad_check: non-finite function value");
        for (auto& p : params) p.zero_grad();
        tape.backward(y);
        for (auto& p : params) analytic.push_back(p.grad());
        for (auto& p : params) p.zero_grad();
    }
    typename Tape<T>::Suspend off;
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const T saved = vals[i];
            vals[i] = saved + epsilon;
            const double up = static_cast<double>(f().item());
            vals[i] = saved - epsilon;
            const double dn = static_cast<double>(f().item());
            vals[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(dn))
                throw NumericError("grad_check: non-finite function value");
            const double numeric = (up - dn) / (2.0 * static_cast<double>(epsilon));
            const double anal = static_cast<double>(analytic[pi][i]);
            const double denom =
                std::max({std::abs(anal), std::abs(numeric), 1e-12});
            worst = std::max(worst, std::abs(anal - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace motadual
