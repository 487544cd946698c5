#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "granite/microgen.hpp"
#include "granite/tensor.hpp"

namespace granite {

// Voigt slot order used throughout: 11, 22, 33, 23, 13, 12.
// Strain vectors hold tensor components (no engineering doubling); the
// shear factor 2 lives in the stiffness mat-vec.
using Voigt6 = std::array<double, 6>;
using Mat66 = std::array<std::array<double, 6>, 6>;
using Mat33 = std::array<std::array<double, 3>, 3>;

struct CubicConstants {
    double c1111 = 1.0;
    double c1122 = 0.7209;
    double c2323 = 0.4477;

    void validate() const {
        if (!(c1111 > c1122) || !(c2323 > 0.0) || !(c1111 + 2.0 * c1122 > 0.0))
            throw std::invalid_argument("cubic constants not positive definite");
    }
};

struct MacroStrain {
    Voigt6 e = {0, 0, 0, 0, 0, 0};

    static MacroStrain uniaxial_e33(double value = 1e-4) {
        MacroStrain m;
        m.e[2] = value;
        return m;
    }
};

struct StiffnessField {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<double> voigt;  // h*w*36, row-major pixels, 6x6 per pixel

    double* at(std::size_t r, std::size_t c) { return voigt.data() + (r * w + c) * 36; }
    const double* at(std::size_t r, std::size_t c) const {
        return voigt.data() + (r * w + c) * 36;
    }
};

struct SolveOptions {
    double tol = 1e-6;
    int max_iter = 5000;
};

struct SolveResult {
    TensorD strain;  // H x W x 6
    TensorD stress;  // H x W x 6
    TensorD vm;      // H x W x 1
    int iterations = 0;
    double residual = 0.0;
};

class NonConverged : public std::runtime_error {
public:
    NonConverged(int iters, double residual)
        : std::runtime_error("solver did not converge after " + std::to_string(iters) +
                             " iterations, residual " + std::to_string(residual)),
          iterations(iters),
          last_residual(residual) {}
    int iterations;
    double last_residual;
};

// Bunge Z-X-Z: crystal frame = Rz(psi2) * Rx(phi) * Rz(psi1) applied to the
// sample frame (passive). Channels arrive as (Phi, Psi1, Psi2).
Mat33 rotation_from_euler(double phi, double psi1, double psi2);

// Voigt matrix of the rotated cubic stiffness: C_ijkl = R_ip R_jq R_kr R_ls C0_pqrs
// with R mapping crystal to sample.
Mat66 voigt_from_euler(double phi, double psi1, double psi2, const CubicConstants& c);

Mat66 cubic_voigt(const CubicConstants& c);

StiffnessField build_stiffness(const Microstructure& ms, const CubicConstants& c);

// Moulinec-Suquet fixed point with an isotropic reference medium, using the
// forward-difference discrete Green operator. The 2D grid is a one-pixel-thick
// periodic slab, so E33 loading is meaningful and all six Voigt components are
// carried.
SolveResult solve(const StiffnessField& stiff, const MacroStrain& E,
                  const SolveOptions& opts = {});

// sqrt(3/2 s:s) with s the per-pixel stress deviator; input H x W x 6.
TensorD von_mises(const TensorD& stress);

// sigma_I = sum_J C_IJ eps_J with the shear columns doubled.
Voigt6 apply_voigt(const double* c66, const Voigt6& eps);

Voigt6 mean_field(const TensorD& field);                          // H x W x 6 -> mean
double double_contract(const Voigt6& sig, const Voigt6& eps);     // sigma : eps

}  // namespace granite
