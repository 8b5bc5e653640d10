#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace mpox::stats {

inline double normal_cdf(double x) { return boost::math::cdf(boost::math::normal_distribution<double>(), x); }
inline double normal_sf(double x) {
    return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), x));
}
inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal_distribution<double>(), p); }

inline double t_sf(double t, double df) {
    return boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(df), t));
}
inline double f_sf(double f, double d1, double d2) {
    if (f <= 0.0) return 1.0;
    if (std::isinf(f)) return 0.0;
    return boost::math::cdf(boost::math::complement(boost::math::fisher_f_distribution<double>(d1, d2), f));
}
inline double chi2_sf(double x, double df) {
    if (x <= 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), x));
}

namespace detail {

// Probability that the range of `cc` standard normals, raised to the power
// `rr` groups, is below w (Hartley's form), by Gauss-Legendre quadrature.
inline double range_prob(double w, double rr, double cc) {
    constexpr int nleg = 12, ihalf = 6;
    constexpr double C1 = -30.0, C2 = -50.0, C3 = 60.0, bb = 8.0, wlar = 3.0, wincr1 = 2.0, wincr2 = 3.0;
    static constexpr double xleg[ihalf] = {0.981560634246719250690549090149, 0.904117256370474856678465866119,
                                           0.769902674194304687036893833213, 0.587317954286617447296702418941,
                                           0.367831498998180193752691536644, 0.125233408511468915472441369464};
    static constexpr double aleg[ihalf] = {0.047175336386511827194615961485, 0.106939325995318430960254718194,
                                           0.160078328543346226334652529543, 0.203167426723065921749064455810,
                                           0.233492536538354808760849898925, 0.249147045813402785000562436043};
    const double qsqz = w * 0.5;
    if (qsqz >= bb) return 1.0;
    double pr_w = 2.0 * normal_cdf(qsqz) - 1.0;
    pr_w = pr_w >= std::exp(C2 / cc) ? std::pow(pr_w, cc) : 0.0;
    const double wincr = w > wlar ? wincr1 : wincr2;
    double blb = qsqz;
    const double binc = (bb - qsqz) / wincr;
    double bub = blb + binc;
    double einsum = 0.0;
    const double cc1 = cc - 1.0;
    for (double wi = 1; wi <= wincr; ++wi) {
        double elsum = 0.0;
        const double a = 0.5 * (bub + blb);
        const double b = 0.5 * (bub - blb);
        for (int jj = 1; jj <= nleg; ++jj) {
            int j;
            double xx;
            if (ihalf < jj) {
                j = nleg - jj + 1;
                xx = xleg[j - 1];
            } else {
                j = jj;
                xx = -xleg[j - 1];
            }
            const double ac = a + b * xx;
            const double qexpo = ac * ac;
            if (qexpo > C3) break;
            const double pplus = 2.0 * normal_cdf(ac);
            const double pminus = 2.0 * normal_cdf(ac - w);
            double rinsum = pplus * 0.5 - pminus * 0.5;
            if (rinsum >= std::exp(C1 / cc1)) {
                rinsum = aleg[j - 1] * std::exp(-0.5 * qexpo) * std::pow(rinsum, cc1);
                elsum += rinsum;
            }
        }
        elsum *= 2.0 * b * cc / std::sqrt(2.0 * M_PI);
        einsum += elsum;
        blb = bub;
        bub += binc;
    }
    pr_w += einsum;
    if (pr_w <= std::exp(C1 / rr)) return 0.0;
    pr_w = std::pow(pr_w, rr);
    return pr_w >= 1.0 ? 1.0 : pr_w;
}

}  // namespace detail

/// CDF of the studentized range for `k` means and `df` error degrees of
/// freedom: the range probability integrated against the chi density of the
/// variance estimate.
inline double studentized_range_cdf(double q, double k, double df) {
    if (q <= 0.0) return 0.0;
    if (std::isinf(q)) return 1.0;
    constexpr double dlarg = 25000.0;
    if (df > dlarg) return detail::range_prob(q, 1.0, k);
    constexpr int nlegq = 16, ihalfq = 8;
    constexpr double eps1 = -30.0, eps2 = 1.0e-14;
    static constexpr double xlegq[ihalfq] = {
        0.989400934991649932596154173450, 0.944575023073232576077988415535, 0.865631202387831743880467897712,
        0.755404408355003033895101194847, 0.617876244402643748446671764049, 0.458016777657227386342419442984,
        0.281603550779258913230460501460, 0.950125098376374401853193354250e-1};
    static constexpr double alegq[ihalfq] = {
        0.271524594117540948517805724560e-1, 0.622535239386478928628438369944e-1, 0.951585116824927848099251076022e-1,
        0.124628971255533872052476282192,    0.149595988816576732081501730547,    0.169156519395002538189312079030,
        0.182603415044923588866763667969,    0.189450610455068496285396723208};
    const double f2 = df * 0.5;
    double f2lf = f2 * std::log(df) - df * M_LN2 - boost::math::lgamma(f2);
    const double f21 = f2 - 1.0;
    const double ff4 = df * 0.25;
    double ulen = 0.125;
    if (df <= 100.0) ulen = 1.0;
    else if (df <= 800.0) ulen = 0.5;
    else if (df <= 5000.0) ulen = 0.25;
    f2lf += std::log(ulen);
    double ans = 0.0;
    for (int i = 1; i <= 50; ++i) {
        double otsum = 0.0;
        const double twa1 = (2 * i - 1) * ulen;
        for (int jj = 1; jj <= nlegq; ++jj) {
            int j;
            double t1;
            const bool upper = ihalfq < jj;
            if (upper) {
                j = jj - ihalfq - 1;
                t1 = f2lf + f21 * std::log(twa1 + xlegq[j] * ulen) - (xlegq[j] * ulen + twa1) * ff4;
            } else {
                j = jj - 1;
                t1 = f2lf + f21 * std::log(twa1 - xlegq[j] * ulen) + (xlegq[j] * ulen - twa1) * ff4;
            }
            if (t1 >= eps1) {
                const double qsqz = upper ? q * std::sqrt((xlegq[j] * ulen + twa1) * 0.5)
                                          : q * std::sqrt((-(xlegq[j] * ulen) + twa1) * 0.5);
                otsum += detail::range_prob(qsqz, 1.0, k) * alegq[j] * std::exp(t1);
            }
        }
        if (i * ulen >= 1.0 && otsum <= eps2) break;
        ans += otsum;
    }
    return ans > 1.0 ? 1.0 : ans;
}

inline double studentized_range_sf(double q, double k, double df) {
    return std::clamp(1.0 - studentized_range_cdf(q, k, df), 0.0, 1.0);
}

}  // namespace mpox::stats
