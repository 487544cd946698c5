#include "granite/elastsolve.hpp"

#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <set>

#include <Eigen/Dense>
#include <fftw3.h>

namespace granite {
namespace {

constexpr int kV2F[6][2] = {{0, 0}, {1, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}};
constexpr int kF2V[3][3] = {{0, 5, 4}, {5, 1, 3}, {4, 3, 2}};

using cplx = std::complex<double>;

// FFTW's planner is not thread-safe; execution is.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftPair {
    fftw_plan fwd = nullptr;
    fftw_plan bwd = nullptr;
    std::vector<cplx> in, out;

    FftPair(std::size_t h, std::size_t w) : in(h * w), out(h * w) {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fwd = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w),
                               reinterpret_cast<fftw_complex*>(in.data()),
                               reinterpret_cast<fftw_complex*>(out.data()),
                               FFTW_FORWARD, FFTW_ESTIMATE);
        bwd = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w),
                               reinterpret_cast<fftw_complex*>(in.data()),
                               reinterpret_cast<fftw_complex*>(out.data()),
                               FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    ~FftPair() {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(bwd);
    }
    FftPair(const FftPair&) = delete;
    FftPair& operator=(const FftPair&) = delete;
};

double fft_freq(std::size_t i, std::size_t n) {
    auto k = static_cast<long>(i);
    auto ln = static_cast<long>(n);
    if (k >= ln - ln / 2) k -= ln;
    return static_cast<double>(k);
}

// Splits each pixel's Kelvin spectrum into the bulk mode (hydrostatic
// eigenvector) and shear modes, then takes mu midway between the extreme
// shear moduli and lambda from the mean bulk modulus.
std::pair<double, double> pick_reference(const StiffnessField& stiff) {
    constexpr double kSqrt2 = std::numbers::sqrt2;
    const double s[6] = {1, 1, 1, kSqrt2, kSqrt2, kSqrt2};
    double mu_min = 1e300, mu_max = -1e300, kappa_sum = 0.0;

    std::set<std::array<double, 36>> seen;  // one eigensolve per distinct pixel matrix
    for (std::size_t p = 0; p < stiff.h * stiff.w; ++p) {
        const double* c = stiff.voigt.data() + p * 36;
        std::array<double, 36> key;
        std::copy(c, c + 36, key.begin());
        if (!seen.insert(key).second) continue;

        Eigen::Matrix<double, 6, 6> kelvin;
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) kelvin(i, j) = c[i * 6 + j] * s[i] * s[j];
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(kelvin);
        if (es.eigenvalues().minCoeff() <= 0.0)
            throw std::invalid_argument("solve: stiffness not positive definite");
        for (int k = 0; k < 6; ++k) {
            double hydro = (es.eigenvectors()(0, k) + es.eigenvectors()(1, k) +
                            es.eigenvectors()(2, k)) /
                           std::sqrt(3.0);
            if (std::abs(hydro) > 0.9)
                kappa_sum += es.eigenvalues()(k) / 3.0;
            else {
                double mu = es.eigenvalues()(k) / 2.0;
                mu_min = std::min(mu_min, mu);
                mu_max = std::max(mu_max, mu);
            }
        }
    }
    double kappa = kappa_sum / static_cast<double>(seen.size());
    double mu = 0.5 * (mu_min + mu_max);
    return {kappa - 2.0 * mu / 3.0, mu};
}

}  // namespace

Mat33 rotation_from_euler(double phi, double psi1, double psi2) {
    double c1 = std::cos(psi1), s1 = std::sin(psi1);
    double cp = std::cos(phi), sp = std::sin(phi);
    double c2 = std::cos(psi2), s2 = std::sin(psi2);
    // g = Rz(psi2) Rx(phi) Rz(psi1), passive; returned R = g^T maps crystal
    // frame vectors into the sample frame.
    Mat33 g;
    g[0][0] = c1 * c2 - s1 * s2 * cp;
    g[0][1] = s1 * c2 + c1 * s2 * cp;
    g[0][2] = s2 * sp;
    g[1][0] = -c1 * s2 - s1 * c2 * cp;
    g[1][1] = -s1 * s2 + c1 * c2 * cp;
    g[1][2] = c2 * sp;
    g[2][0] = s1 * sp;
    g[2][1] = -c1 * sp;
    g[2][2] = cp;
    Mat33 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r[i][j] = g[j][i];
    return r;
}

Mat66 cubic_voigt(const CubicConstants& c) {
    c.validate();
    Mat66 m{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m[i][j] = i == j ? c.c1111 : c.c1122;
    for (int i = 3; i < 6; ++i) m[i][i] = c.c2323;
    return m;
}

Mat66 voigt_from_euler(double phi, double psi1, double psi2, const CubicConstants& c) {
    c.validate();
    Mat33 r = rotation_from_euler(phi, psi1, psi2);
    double aniso = c.c1111 - c.c1122 - 2.0 * c.c2323;

    // C_ijkl = lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk) + aniso sum_m R_im R_jm R_km R_lm
    // (isotropic parts are rotation-invariant, so only the cubic excess rotates)
    double lam = c.c1122, mu = c.c2323;
    Mat66 out{};
    for (int I = 0; I < 6; ++I)
        for (int J = 0; J < 6; ++J) {
            int i = kV2F[I][0], j = kV2F[I][1], k = kV2F[J][0], l = kV2F[J][1];
            double iso = lam * (i == j) * (k == l) +
                         mu * ((i == k) * (j == l) + (i == l) * (j == k));
            double cub = 0.0;
            for (int m = 0; m < 3; ++m) cub += r[i][m] * r[j][m] * r[k][m] * r[l][m];
            out[I][J] = iso + aniso * cub;
        }
    return out;
}

StiffnessField build_stiffness(const Microstructure& ms, const CubicConstants& c) {
    const std::size_t h = ms.euler.dim(0), w = ms.euler.dim(1);
    StiffnessField f;
    f.h = h;
    f.w = w;
    f.voigt.resize(h * w * 36);

    std::map<int, Mat66> per_grain;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t cc = 0; cc < w; ++cc) {
            int g = static_cast<int>(ms.labels(r, cc, 0));
            auto it = per_grain.find(g);
            if (it == per_grain.end()) {
                Mat66 m = voigt_from_euler(ms.euler(r, cc, 0), ms.euler(r, cc, 1),
                                           ms.euler(r, cc, 2), c);
                it = per_grain.emplace(g, m).first;
            }
            double* dst = f.at(r, cc);
            for (int i = 0; i < 6; ++i)
                for (int j = 0; j < 6; ++j) dst[i * 6 + j] = it->second[i][j];
        }
    return f;
}

Voigt6 apply_voigt(const double* c66, const Voigt6& eps) {
    Voigt6 sig{};
    for (int i = 0; i < 6; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 3; ++j) acc += c66[i * 6 + j] * eps[static_cast<std::size_t>(j)];
        for (int j = 3; j < 6; ++j)
            acc += 2.0 * c66[i * 6 + j] * eps[static_cast<std::size_t>(j)];
        sig[static_cast<std::size_t>(i)] = acc;
    }
    return sig;
}

double double_contract(const Voigt6& sig, const Voigt6& eps) {
    double acc = 0.0;
    for (int i = 0; i < 3; ++i) acc += sig[static_cast<std::size_t>(i)] * eps[static_cast<std::size_t>(i)];
    for (int i = 3; i < 6; ++i) acc += 2.0 * sig[static_cast<std::size_t>(i)] * eps[static_cast<std::size_t>(i)];
    return acc;
}

Voigt6 mean_field(const TensorD& field) {
    Voigt6 m{};
    const std::size_t n = field.dim(0) * field.dim(1);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < 6; ++c) m[c] += field[p * 6 + c];
    for (auto& v : m) v /= static_cast<double>(n);
    return m;
}

TensorD von_mises(const TensorD& stress) {
    if (stress.rank() != 3 || stress.dim(2) != 6)
        throw std::invalid_argument("von_mises: expected H x W x 6 stress");
    const std::size_t h = stress.dim(0), w = stress.dim(1);
    TensorD vm({h, w, 1});
    for (std::size_t p = 0; p < h * w; ++p) {
        const double* s = stress.ptr() + p * 6;
        double tr = (s[0] + s[1] + s[2]) / 3.0;
        double d0 = s[0] - tr, d1 = s[1] - tr, d2 = s[2] - tr;
        double dev2 = d0 * d0 + d1 * d1 + d2 * d2 +
                      2.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5]);
        vm[p] = std::sqrt(1.5 * dev2);
    }
    return vm;
}

SolveResult solve(const StiffnessField& stiff, const MacroStrain& E,
                  const SolveOptions& opts) {
    if (opts.tol <= 0.0) throw std::invalid_argument("solve: tol must be positive");
    const std::size_t h = stiff.h, w = stiff.w, n = h * w;
    if (n == 0) throw std::invalid_argument("solve: empty stiffness field");

    // Isotropic reference: mu midway between the extreme shear eigenvalues
    // over all pixels, lambda from the mean bulk modulus. Only convergence
    // speed depends on this, not the fixed point.
    auto [lam_ref, mu_ref] = pick_reference(stiff);

    FftPair fft(h, w);
    std::vector<std::vector<cplx>> eps_hat(6, std::vector<cplx>(n, cplx(0, 0)));
    std::vector<std::vector<cplx>> sig_hat(6, std::vector<cplx>(n));
    for (int c = 0; c < 6; ++c)
        eps_hat[static_cast<std::size_t>(c)][0] =
            cplx(static_cast<double>(n) * E.e[static_cast<std::size_t>(c)], 0.0);

    TensorD eps({h, w, 6}), sig({h, w, 6});
    const double two_pi = 2.0 * std::numbers::pi;

    // Forward-difference discretization: the derivative along axis j acts in
    // Fourier space as multiplication by k_j = exp(i phi_j) - 1 and the
    // divergence by conj(k_j). The reference acoustic tensor is then Hermitian
    // with a closed-form inverse (2x2 in-plane block, u2 decoupled). Unlike
    // the continuous-frequency Green operator, whose iteration count grows
    // quadratically with grid size on pixelated media, the contraction rate
    // here is grid-size independent.
    std::vector<cplx> kt1(w), kt2(h);
    for (std::size_t cc = 0; cc < w; ++cc)
        kt1[cc] = std::polar(1.0, two_pi * fft_freq(cc, w) / static_cast<double>(w)) - 1.0;
    for (std::size_t r = 0; r < h; ++r)
        kt2[r] = std::polar(1.0, two_pi * fft_freq(r, h) / static_cast<double>(h)) - 1.0;
    const double lm = lam_ref + mu_ref;

    int iter = 0;
    double residual = 0.0;
    bool converged = false;
    while (iter < opts.max_iter) {
        ++iter;

        for (std::size_t c = 0; c < 6; ++c) {
            std::copy(eps_hat[c].begin(), eps_hat[c].end(), fft.in.begin());
            fftw_execute(fft.bwd);
            const double scale = 1.0 / static_cast<double>(n);
            for (std::size_t p = 0; p < n; ++p) eps[p * 6 + c] = fft.out[p].real() * scale;
        }

        for (std::size_t p = 0; p < n; ++p) {
            Voigt6 e;
            for (std::size_t c = 0; c < 6; ++c) e[c] = eps[p * 6 + c];
            Voigt6 s = apply_voigt(stiff.voigt.data() + p * 36, e);
            for (std::size_t c = 0; c < 6; ++c) sig[p * 6 + c] = s[c];
        }

        for (std::size_t c = 0; c < 6; ++c) {
            for (std::size_t p = 0; p < n; ++p) fft.in[p] = cplx(sig[p * 6 + c], 0.0);
            fftw_execute(fft.fwd);
            std::copy(fft.out.begin(), fft.out.end(), sig_hat[c].begin());
        }

        double num = 0.0;
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t cc = 0; cc < w; ++cc) {
                if (r == 0 && cc == 0) continue;
                std::size_t p = r * w + cc;
                cplx d1 = std::conj(kt1[cc]), d2 = std::conj(kt2[r]);
                // b_i = sigma_hat_ij conj(k_j), k3 = 0
                cplx b0 = sig_hat[0][p] * d1 + sig_hat[5][p] * d2;
                cplx b1 = sig_hat[5][p] * d1 + sig_hat[1][p] * d2;
                cplx b2 = sig_hat[4][p] * d1 + sig_hat[3][p] * d2;
                num += std::norm(b0) + std::norm(b1) + std::norm(b2);
            }
        double den2 = 0.0;
        for (int c = 0; c < 3; ++c) den2 += std::norm(sig_hat[static_cast<std::size_t>(c)][0]);
        for (int c = 3; c < 6; ++c) den2 += 2.0 * std::norm(sig_hat[static_cast<std::size_t>(c)][0]);
        double den = std::sqrt(den2);
        residual = den > 0.0 ? std::sqrt(num) / den : std::sqrt(num);

        if (residual <= opts.tol) {
            converged = true;
            break;
        }

        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t cc = 0; cc < w; ++cc) {
                if (r == 0 && cc == 0) continue;
                std::size_t p = r * w + cc;
                cplx k1 = kt1[cc], k2 = kt2[r];
                double a1 = std::norm(k1), a2 = std::norm(k2), ksq = a1 + a2;

                cplx b0 = sig_hat[0][p] * std::conj(k1) + sig_hat[5][p] * std::conj(k2);
                cplx b1 = sig_hat[5][p] * std::conj(k1) + sig_hat[1][p] * std::conj(k2);
                cplx b2 = sig_hat[4][p] * std::conj(k1) + sig_hat[3][p] * std::conj(k2);

                // u = A_ref^-1 b; the in-plane block of A_ref is
                // [[m11, m12], [conj(m12), m22]] and u2 sees mu |k|^2 alone
                double m11 = mu_ref * ksq + lm * a1;
                double m22 = mu_ref * ksq + lm * a2;
                cplx m12 = lam_ref * std::conj(k1) * k2 + mu_ref * k1 * std::conj(k2);
                double det = m11 * m22 - std::norm(m12);
                cplx u0 = (m22 * b0 - m12 * b1) / det;
                cplx u1 = (m11 * b1 - std::conj(m12) * b0) / det;
                cplx u2 = b2 / (mu_ref * ksq);

                // eps_hat -= sym(u (x) k)
                eps_hat[0][p] -= u0 * k1;
                eps_hat[1][p] -= u1 * k2;
                // slot 2 (33) untouched: k3 = 0
                eps_hat[3][p] -= 0.5 * u2 * k2;
                eps_hat[4][p] -= 0.5 * u2 * k1;
                eps_hat[5][p] -= 0.5 * (u0 * k2 + u1 * k1);
            }
    }

    if (!converged) throw NonConverged(iter, residual);

    SolveResult res;
    res.strain = std::move(eps);
    res.stress = std::move(sig);
    res.vm = von_mises(res.stress);
    res.iterations = iter;
    res.residual = residual;
    return res;
}

}  // namespace granite
