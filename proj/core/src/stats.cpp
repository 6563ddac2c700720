#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "vlmpc/memory.hpp"

namespace vlmpc {

namespace {

struct Moments {
    double mean = 0.0;
    double variance = 0.0;  // unbiased
    double n = 0.0;
};

Moments moments(std::span<const double> xs)
{
    Moments m;
    m.n = static_cast<double>(xs.size());
    m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / m.n;
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - m.mean) * (x - m.mean);
    }
    m.variance = ss / (m.n - 1.0);
    return m;
}

}  // namespace

std::optional<WelchResult> welch_t_test(std::span<const double> lhs, std::span<const double> rhs)
{
    if (lhs.size() < 2 || rhs.size() < 2) {
        return std::nullopt;
    }
    const Moments a = moments(lhs);
    const Moments b = moments(rhs);
    const double va = a.variance / a.n;
    const double vb = b.variance / b.n;
    const double se2 = va + vb;

    WelchResult out;
    const double diff = a.mean - b.mean;
    // Degenerate spread: identical means are indistinguishable, anything else is certain.
    if (!(se2 > 0.0)) {
        out.t_statistic = diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff);
        out.dof = a.n + b.n - 2.0;
        out.p_value = diff == 0.0 ? 1.0 : 0.0;
        return out;
    }
    out.t_statistic = diff / std::sqrt(se2);
    out.dof = se2 * se2 / (va * va / (a.n - 1.0) + vb * vb / (b.n - 1.0));
    const boost::math::students_t dist(out.dof);
    out.p_value = std::min(1.0, 2.0 * boost::math::cdf(dist, -std::abs(out.t_statistic)));
    return out;
}

}  // namespace vlmpc
