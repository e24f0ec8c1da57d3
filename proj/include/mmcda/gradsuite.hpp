#pragma once

#include "mmcda/diff.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mmcda {

struct GradSuiteEntry {
    std::string name;
    GradCheckResult worst;       // worst instance for this case
    std::uint64_t worst_seed = 0;
    Index redrawn = 0;           // instances replaced because a kink sat inside the stencil
};

struct GradSuiteReport {
    std::vector<GradSuiteEntry> entries;
    Index instances = 0;

    double max_rel_error() const;
    const GradSuiteEntry& worst() const;
};

/// Names of every case in the suite: one per differentiable op plus the
/// encoder, fusion and loss composites.
std::vector<std::string> grad_suite_cases();

/// Re-run one case on the instance drawn from `instance_seed` (as reported in
/// GradSuiteEntry::worst_seed).
GradCheckResult run_grad_case(const std::string& name, std::uint64_t instance_seed, double perturbation = 1e-5);

/// Central-difference check of every case on `instances` random instances
/// derived from `seed`. An instance where some entry's stencil straddles a
/// kink is replaced by the next draw. `only` restricts the run to the named cases.
GradSuiteReport run_grad_suite(std::uint64_t seed, Index instances = 100, double perturbation = 1e-5,
                               const std::vector<std::string>& only = {});

}  // namespace mmcda
