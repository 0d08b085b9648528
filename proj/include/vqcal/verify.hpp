#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace vqcal {

struct CheckResult {
    std::string name;
    bool passed = false;
    double value = 0.0;      // worst observed error or mismatch count
    double tolerance = 0.0;
    std::string detail;
    double seconds = 0.0;
};

/// Slot-wise assignment against brute-force enumeration of every codeword
/// concatenation, on random instances with w in {1,2,3}, |C| in {2..5},
/// d in {1..3}. Passes on exact index equality.
CheckResult verify_nearest_enumeration(std::uint64_t seed, std::size_t instances = 100);

/// Log-linear posterior with b_j = log pi_j - log B(alpha_j), w_j = alpha_j - 1
/// against the Dirichlet-density Bayes posterior, |Y| = 3, alpha >= 0.5.
CheckResult verify_dirichlet_bayes(std::uint64_t seed, std::size_t points = 100, double tol = 1e-6);

/// Finite-difference checks for the VQ head, each calibrator block (A, B,
/// beta, sigma^2) and the Dirichlet baseline at `points` random points each.
std::vector<CheckResult> verify_gradients(std::uint64_t seed, std::size_t points = 5, double tol = 1e-4);

struct VerifyReport {
    std::vector<CheckResult> checks;
    bool all_passed() const;
};

VerifyReport run_verify(std::uint64_t seed);
nlohmann::json to_json(const VerifyReport& r);

}  // namespace vqcal
