#pragma once

#include <string>
#include <vector>

#include "pheye/cost.hpp"
#include "pheye/decoder.hpp"

namespace pheye {

struct SweepGeometry {
    std::string name;
    VitGeometry vision;
    DecoderGeometry decoder;
    std::size_t n_t = 1;
};

// Five small geometries covering I = 1..4, D != D_ViT and grids of 2 and 3.
std::vector<SweepGeometry> toy_sweep();

struct ReconcileRow {
    std::string geometry;
    std::string formula;  // vit, pheye_vit, llava_lm, pheye_lm
    Reconciliation result;
};

struct VerifyReport {
    std::vector<ReconcileRow> rows;

    bool all_exact() const;
    std::string json() const;
};

// Runs each geometry through the instrumented model and compares the ledgers
// with the analytic counts under `accounting`.
VerifyReport run_verify(const std::vector<SweepGeometry>& sweep, Accounting accounting, std::uint64_t seed = 7);

}  // namespace pheye
