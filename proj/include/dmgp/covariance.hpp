#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "model.hpp"

namespace dmgp {

constexpr double kBaseJitter = 1e-8;
constexpr double kMaxJitter = 1e-4;

/// Convolution of two unit-amplitude Gaussian smoothing kernels with diagonal
/// length-scales `ls1`, `ls2`, evaluated at inputs `x1`, `x2`.
/// Per-dimension factors are accumulated in log space.
template <class X1, class X2, class L1, class L2>
double unit_kernel(const Eigen::MatrixBase<X1>& x1, const Eigen::MatrixBase<X2>& x2, const Eigen::MatrixBase<L1>& ls1,
                   const Eigen::MatrixBase<L2>& ls2)
{
    double logk = 0.0;
    for (Eigen::Index l = 0; l < x1.size(); ++l) {
        const double t1 = ls1(l);
        const double t2 = ls2(l);
        const double s = t1 + t2;
        const double r = x1(l) - x2(l);
        logk += 0.25 * (std::log(t1) + std::log(t2)) - 0.5 * std::log(s) - 0.5 * r * r / s;
    }
    return std::exp(logk);
}

namespace detail {
template <class L>
void require_positive(const Eigen::MatrixBase<L>& ls)
{
    for (Eigen::Index l = 0; l < ls.size(); ++l)
        if (!(ls(l) > 0.0))
            throw ContractError("length-scales must be strictly positive");
}
} // namespace detail

/// Auto-covariance of one source between (x at t) and (x' at t').
template <class X1, class X2, class L1, class L2>
double source_auto_cov(const Eigen::MatrixBase<X1>& x, const Eigen::MatrixBase<X2>& xp, double amp_t, double amp_tp,
                       const Eigen::MatrixBase<L1>& ls_t, const Eigen::MatrixBase<L2>& ls_tp)
{
    detail::require_positive(ls_t);
    detail::require_positive(ls_tp);
    return amp_t * amp_tp * unit_kernel(x, xp, ls_t, ls_tp);
}

/// Source-to-target cross-covariance: source kernel at t on the left, target-side kernel at t' on the right.
template <class X1, class X2, class L1, class L2>
double cross_cov(const Eigen::MatrixBase<X1>& x, const Eigen::MatrixBase<X2>& xp, double source_amp_t,
                 double target_amp_tp, const Eigen::MatrixBase<L1>& source_ls_t, const Eigen::MatrixBase<L2>& target_ls_tp)
{
    return source_auto_cov(x, xp, source_amp_t, target_amp_tp, source_ls_t, target_ls_tp);
}

/// Target auto-covariance: sum over all latent processes j of the single-kernel form.
/// `amp_t(j)` and `ls_t.row(j)` hold the j-th target-side kernel at time t.
inline double target_auto_cov(const Eigen::VectorXd& x, const Eigen::VectorXd& xp, const Eigen::VectorXd& amp_t,
                              const Eigen::VectorXd& amp_tp, const Eigen::MatrixXd& ls_t, const Eigen::MatrixXd& ls_tp)
{
    double k = 0.0;
    for (Eigen::Index j = 0; j < amp_t.size(); ++j)
        k += source_auto_cov(x, xp, amp_t(j), amp_tp(j), ls_t.row(j), ls_tp.row(j));
    return k;
}

/// Matrix of unit kernels between rows of (X1, L1) and rows of (X2, L2).
inline Eigen::MatrixXd unit_kernel_matrix(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& ls1,
                                          const Eigen::MatrixXd& x2, const Eigen::MatrixXd& ls2, bool symmetric = false)
{
    Eigen::MatrixXd u(x1.rows(), x2.rows());
    for (Eigen::Index b = 0; b < x2.rows(); ++b) {
        const Eigen::Index a0 = symmetric ? b : 0;
        for (Eigen::Index a = a0; a < x1.rows(); ++a)
            u(a, b) = unit_kernel(x1.row(a), x2.row(b), ls1.row(a), ls2.row(b));
    }
    if (symmetric)
        u.triangularView<Eigen::StrictlyUpper>() = u.transpose().triangularView<Eigen::StrictlyUpper>();
    return u;
}

/// Rows `rows` of a matrix.
inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, std::span<const Eigen::Index> rows)
{
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
        out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
    return out;
}

inline Eigen::VectorXd take_rows(const Eigen::VectorXd& v, std::span<const Eigen::Index> rows)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        out(static_cast<Eigen::Index>(r)) = v(rows[r]);
    return out;
}

inline std::vector<Eigen::Index> all_rows(Eigen::Index n)
{
    std::vector<Eigen::Index> r(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        r[static_cast<std::size_t>(i)] = i;
    return r;
}

/// Adds kBaseJitter * mean(diagonal) to the diagonal.
inline void add_jitter(Eigen::MatrixXd& k)
{
    if (k.rows() == 0)
        return;
    k.diagonal().array() += kBaseJitter * k.diagonal().mean();
}

/// Block-partitioned covariance of all observations. Noise and base jitter are on the diagonals.
struct CovBlocks {
    std::vector<Eigen::MatrixXd> k_ss; // per source, n_i x n_i
    std::vector<Eigen::MatrixXd> k_sm; // per source, n_i x n_m
    Eigen::MatrixXd k_mm;              // n_m x n_m
};

/// Source auto-covariance block without noise.
inline Eigen::MatrixXd source_block(const OutputSeries& s, const Eigen::VectorXd& amp, const Eigen::MatrixXd& ls)
{
    Eigen::MatrixXd u = unit_kernel_matrix(s.inputs, ls, s.inputs, ls, true);
    return amp.asDiagonal() * u * amp.asDiagonal();
}

/// Assembles the covariance blocks restricted to target rows `rows`.
inline CovBlocks assemble(const Dataset& data, const KernelParams& kp, std::span<const Eigen::Index> rows)
{
    kp.check_shapes(data);
    CovBlocks blocks;
    const Eigen::MatrixXd xm = take_rows(data.target.inputs, rows);
    for (Eigen::Index i = 0; i < data.num_sources(); ++i) {
        const auto& s = data.sources[i];
        Eigen::MatrixXd k = source_block(s, kp.source_amp[i], kp.source_ls[i]);
        k.diagonal().array() += kp.source_noise(i) * kp.source_noise(i);
        add_jitter(k);
        blocks.k_ss.push_back(std::move(k));

        const Eigen::VectorXd amp_m = take_rows(kp.target_amp[i], rows);
        const Eigen::MatrixXd ls_m = take_rows(kp.target_ls[i], rows);
        Eigen::MatrixXd u = unit_kernel_matrix(s.inputs, kp.source_ls[i], xm, ls_m);
        blocks.k_sm.push_back(kp.source_amp[i].asDiagonal() * u * amp_m.asDiagonal());
    }
    const auto nm = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd kmm = Eigen::MatrixXd::Zero(nm, nm);
    for (Eigen::Index j = 0; j < data.num_outputs(); ++j) {
        const Eigen::VectorXd amp_m = take_rows(kp.target_amp[j], rows);
        const Eigen::MatrixXd ls_m = take_rows(kp.target_ls[j], rows);
        kmm += amp_m.asDiagonal() * unit_kernel_matrix(xm, ls_m, xm, ls_m, true) * amp_m.asDiagonal();
    }
    kmm.diagonal().array() += kp.target_noise * kp.target_noise;
    add_jitter(kmm);
    blocks.k_mm = std::move(kmm);
    return blocks;
}

inline CovBlocks assemble(const Dataset& data, const KernelParams& kp)
{
    const auto rows = all_rows(data.target.size());
    return assemble(data, kp, rows);
}

/// The full N x N covariance implied by the blocks (sources first, target last).
inline Eigen::MatrixXd dense_covariance(const CovBlocks& blocks)
{
    Eigen::Index n = blocks.k_mm.rows();
    for (const auto& k : blocks.k_ss)
        n += k.rows();
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(n, n);
    Eigen::Index off = 0;
    const Eigen::Index tm = n - blocks.k_mm.rows();
    for (std::size_t i = 0; i < blocks.k_ss.size(); ++i) {
        const auto ni = blocks.k_ss[i].rows();
        full.block(off, off, ni, ni) = blocks.k_ss[i];
        full.block(off, tm, ni, blocks.k_mm.rows()) = blocks.k_sm[i];
        full.block(tm, off, blocks.k_mm.rows(), ni) = blocks.k_sm[i].transpose();
        off += ni;
    }
    full.block(tm, tm, blocks.k_mm.rows(), blocks.k_mm.rows()) = blocks.k_mm;
    return full;
}

struct Cholesky {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double added_jitter = 0.0; // absolute value added to the diagonal beyond the input

    double log_det() const { return 2.0 * llt.matrixLLT().diagonal().array().log().sum(); }
};

/// Cholesky factorization, escalating diagonal jitter by x10 from 1e-7 up to
/// kMaxJitter (relative to the mean diagonal) on failure.
inline Cholesky robust_cholesky(const Eigen::MatrixXd& k, const std::string& what)
{
    Cholesky c;
    if (k.rows() == 0)
        return c;
    c.llt.compute(k);
    if (c.llt.info() == Eigen::Success && std::isfinite(c.llt.matrixLLT().diagonal().sum()))
        return c;
    const double scale = std::max(std::abs(k.diagonal().mean()), 1e-300);
    for (double rel = kBaseJitter * 10.0; rel <= kMaxJitter * 1.0001; rel *= 10.0) {
        Eigen::MatrixXd kj = k;
        kj.diagonal().array() += rel * scale;
        c.llt.compute(kj);
        if (c.llt.info() == Eigen::Success && std::isfinite(c.llt.matrixLLT().diagonal().sum())) {
            c.added_jitter = rel * scale;
            return c;
        }
    }
    throw NumericalError("Cholesky factorization of " + what + " failed after jitter escalation to "
                         + std::to_string(kMaxJitter) + " x mean diagonal");
}

} // namespace dmgp
