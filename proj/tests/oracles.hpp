#pragma once

// Independent reference computations used by the tests.

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include <dmgp/model.hpp>

namespace oracle {

/// Gaussian smoothing kernel with diagonal length-scale (variance) theta, unit amplitude.
inline double smoothing_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& theta)
{
    const double d = static_cast<double>(x.size());
    double q = 0.0, logdet = 0.0;
    for (Eigen::Index l = 0; l < x.size(); ++l) {
        q += x(l) * x(l) / theta(l);
        logdet += std::log(theta(l));
    }
    return std::pow(2.0 * std::numbers::pi, -d / 4.0) * std::exp(-0.25 * logdet - 0.5 * q);
}

/// Trapezoid rule over [lo, hi]^d for d = 1 or 2.
inline double integrate(const std::function<double(const Eigen::VectorXd&)>& f, int d, double lo, double hi, int n)
{
    const double h = (hi - lo) / n;
    auto w = [&](int k) { return (k == 0 || k == n) ? 0.5 : 1.0; };
    double s = 0.0;
    Eigen::VectorXd z(d);
    if (d == 1) {
        for (int a = 0; a <= n; ++a) {
            z(0) = lo + a * h;
            s += w(a) * f(z);
        }
        return s * h;
    }
    for (int a = 0; a <= n; ++a)
        for (int b = 0; b <= n; ++b) {
            z(0) = lo + a * h;
            z(1) = lo + b * h;
            s += w(a) * w(b) * f(z);
        }
    return s * h * h;
}

/// Covariance of two convolved outputs, computed by quadrature of
/// alpha1 alpha2 * int g1(x1 - z) g2(x2 - z) dz.
inline double convolution_cov(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2, double a1, double a2,
                              const Eigen::VectorXd& th1, const Eigen::VectorXd& th2)
{
    const int d = static_cast<int>(x1.size());
    const double reach = 12.0 * std::sqrt(std::max(th1.maxCoeff(), th2.maxCoeff()));
    const double lo = std::min(x1.minCoeff(), x2.minCoeff()) - reach;
    const double hi = std::max(x1.maxCoeff(), x2.maxCoeff()) + reach;
    const int n = d == 1 ? 4000 : 600;
    auto f = [&](const Eigen::VectorXd& z) {
        return smoothing_kernel(x1 - z, th1) * smoothing_kernel(x2 - z, th2);
    };
    return a1 * a2 * integrate(f, d, lo, hi, n);
}

/// Central finite-difference gradient.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h = 1e-5)
{
    Eigen::VectorXd g(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        Eigen::VectorXd xp = x, xm = x;
        xp(k) += h;
        xm(k) -= h;
        g(k) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

/// Conditional mean and variance of the last coordinate given the others, from a dense joint covariance.
inline std::pair<double, double> dense_conditional(const Eigen::MatrixXd& joint, const Eigen::VectorXd& y)
{
    const Eigen::Index n = y.size();
    const Eigen::MatrixXd k = joint.topLeftCorner(n, n);
    const Eigen::VectorXd ks = joint.topRightCorner(n, 1);
    const double kss = joint(n, n);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
    return {ks.dot(lu.solve(y)), kss - ks.dot(lu.solve(ks))};
}

/// Simpson quadrature of the integral form of CRPS: int (Phi((u - mu)/s) - 1{u >= y})^2 du.
inline double crps_quadrature(double mu, double s, double y)
{
    auto cdf = [&](double u) { return 0.5 * std::erfc(-(u - mu) / (s * std::numbers::sqrt2)); };
    auto piece = [&](double a, double b, bool above) {
        const int n = 20000;
        const double h = (b - a) / n;
        double acc = 0.0;
        for (int k = 0; k <= n; ++k) {
            const double u = a + k * h;
            const double v = cdf(u) - (above ? 1.0 : 0.0);
            acc += ((k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0)) * v * v;
        }
        return acc * h / 3.0;
    };
    const double lo = std::min(mu, y) - 12.0 * s;
    const double hi = std::max(mu, y) + 12.0 * s;
    // Split at y where the indicator jumps, and at mu where the integrand curves most.
    const double m1 = std::min(mu, y), m2 = std::max(mu, y);
    auto seg = [&](double a, double b) {
        if (b <= a)
            return 0.0;
        return piece(a, b, a >= y);
    };
    return seg(lo, m1) + seg(m1, m2) + seg(m2, hi);
}

/// A random dataset on a shared time grid with the given sizes.
inline dmgp::Dataset random_dataset(int m, int n, int d, std::mt19937_64& rng)
{
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(-2.0, 2.0);
    dmgp::Dataset data;
    auto series = [&](int id) {
        dmgp::OutputSeries s;
        s.id = id;
        s.inputs.resize(n, d);
        s.observations.resize(n);
        for (int a = 0; a < n; ++a) {
            s.times.push_back(a + 1);
            for (int l = 0; l < d; ++l)
                s.inputs(a, l) = d == 1 ? 0.5 * (a + 1) : ud(rng);
            s.observations(a) = nd(rng);
        }
        return s;
    };
    for (int i = 0; i < m - 1; ++i)
        data.sources.push_back(series(i));
    data.target = series(m - 1);
    return data;
}

/// Random unconstrained parameters on the dataset's grids.
inline dmgp::DynamicParams random_params(const dmgp::Dataset& data, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> amp(-0.5, 1.0), ls(-0.5, 1.5), noise(-2.0, -0.5);
    dmgp::DynamicParams p = dmgp::initial_params(data, rng);
    auto fill = [&](auto& m, auto& dist) { m = m.unaryExpr([&](double) { return dist(rng); }); };
    for (auto& v : p.source_amp)
        fill(v, amp);
    for (auto& v : p.source_ls)
        fill(v, ls);
    for (auto& v : p.target_amp)
        fill(v, amp);
    for (auto& v : p.target_ls)
        fill(v, ls);
    fill(p.source_noise, noise);
    p.target_noise = noise(rng);
    return p;
}

} // namespace oracle

namespace oracle {

/// Closed-form covariance of two convolved processes written per dimension as
/// sqrt(sqrt(t1 t2) / (t1 + t2)) exp(-r^2 / (2 (t1 + t2))).
inline double pair_cov(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2, double a1, double a2,
                       const Eigen::VectorXd& t1, const Eigen::VectorXd& t2)
{
    double k = a1 * a2;
    for (Eigen::Index l = 0; l < x1.size(); ++l) {
        const double s = t1(l) + t2(l);
        const double r = x1(l) - x2(l);
        k *= std::sqrt(std::sqrt(t1(l) * t2(l)) / s) * std::exp(-0.5 * r * r / s);
    }
    return k;
}

/// Joint covariance of all observations plus one noisy target query point, built element by
/// element. Jitter mirrors the library: 1e-8 times the block's mean diagonal, the query
/// sharing the training-target value.
inline Eigen::MatrixXd joint_with_query(const dmgp::Dataset& data, const dmgp::KernelParams& kp,
                                        const Eigen::VectorXd& xq, const Eigen::VectorXd& aq, const Eigen::MatrixXd& lq)
{
    struct Point {
        int source; // -1 target side
        Eigen::VectorXd x;
        double amp;                      // source amplitude
        Eigen::VectorXd ls;              // source ls
        std::vector<double> tamp;        // target side, per latent
        std::vector<Eigen::VectorXd> tls; // target side, per latent
    };
    std::vector<Point> pts;
    const auto m = data.num_outputs();
    for (Eigen::Index i = 0; i < data.num_sources(); ++i)
        for (Eigen::Index a = 0; a < data.sources[i].size(); ++a)
            pts.push_back({static_cast<int>(i), data.sources[i].inputs.row(a).transpose(), kp.source_amp[i](a),
                           kp.source_ls[i].row(a).transpose(), {}, {}});
    auto target_point = [&](const Eigen::VectorXd& x, auto amp, auto ls) {
        Point p{-1, x, 0.0, {}, {}, {}};
        for (Eigen::Index j = 0; j < m; ++j) {
            p.tamp.push_back(amp(j));
            p.tls.push_back(ls(j));
        }
        return p;
    };
    for (Eigen::Index r = 0; r < data.target.size(); ++r)
        pts.push_back(target_point(
            data.target.inputs.row(r).transpose(), [&](Eigen::Index j) { return kp.target_amp[j](r); },
            [&](Eigen::Index j) { return Eigen::VectorXd(kp.target_ls[j].row(r).transpose()); }));
    pts.push_back(target_point(
        xq, [&](Eigen::Index j) { return aq(j); }, [&](Eigen::Index j) { return Eigen::VectorXd(lq.row(j).transpose()); }));

    const auto n = static_cast<Eigen::Index>(pts.size());
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b < n; ++b) {
            const Point& p = pts[a];
            const Point& q = pts[b];
            double v = 0.0;
            if (p.source >= 0 && q.source >= 0) {
                if (p.source == q.source)
                    v = pair_cov(p.x, q.x, p.amp, q.amp, p.ls, q.ls);
            } else if (p.source >= 0) {
                v = pair_cov(p.x, q.x, p.amp, q.tamp[p.source], p.ls, q.tls[p.source]);
            } else if (q.source >= 0) {
                v = pair_cov(p.x, q.x, p.tamp[q.source], q.amp, p.tls[q.source], q.ls);
            } else {
                for (Eigen::Index j = 0; j < m; ++j)
                    v += pair_cov(p.x, q.x, p.tamp[j], q.tamp[j], p.tls[j], q.tls[j]);
            }
            k(a, b) = v;
        }
    // Noise and jitter.
    Eigen::Index off = 0;
    for (Eigen::Index i = 0; i < data.num_sources(); ++i) {
        const auto ni = data.sources[i].size();
        k.diagonal().segment(off, ni).array() += kp.source_noise(i) * kp.source_noise(i);
        const double jit = 1e-8 * k.diagonal().segment(off, ni).mean();
        k.diagonal().segment(off, ni).array() += jit;
        off += ni;
    }
    const auto nm = data.target.size();
    k.diagonal().tail(nm + 1).array() += kp.target_noise * kp.target_noise;
    const double jit = nm > 0 ? 1e-8 * k.diagonal().segment(off, nm).mean() : 0.0;
    k.diagonal().tail(nm + 1).array() += jit;
    return k;
}

} // namespace oracle
