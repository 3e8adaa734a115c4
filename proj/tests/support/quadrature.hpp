#pragma once

#include <cmath>
#include <utility>

namespace testsupport {

// Adaptive Simpson quadrature. Independent of the library's closed-form
// interval masses, so it can serve as an oracle for them.
template <typename F>
double simpson_slice(F&& f, double a, double b, double fa, double fm, double fb) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <typename F>
double adaptive_simpson_rec(F&& f, double a, double m, double b, double fa, double fm, double fb,
                            double whole, double tol, int depth) {
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = simpson_slice(f, a, m, fa, flm, fm);
    const double right = simpson_slice(f, m, b, fm, frm, fb);
    if (depth <= 0 || std::fabs(left + right - whole) <= 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson_rec(f, a, lm, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson_rec(f, m, rm, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <typename F>
double integrate(F&& f, double a, double b, double tol = 1e-12, int max_depth = 48) {
    if (a == b) return 0.0;
    const double m = 0.5 * (a + b);
    const double fa = f(a);
    const double fm = f(m);
    const double fb = f(b);
    const double whole = simpson_slice(f, a, b, fa, fm, fb);
    return adaptive_simpson_rec(f, a, m, b, fa, fm, fb, whole, tol, max_depth);
}

} // namespace testsupport
