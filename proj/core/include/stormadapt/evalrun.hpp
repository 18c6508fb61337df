#pragma once

#include "stormadapt/trainer.hpp"

namespace stormadapt {

// One evaluated condition: the clear images or one weather render key.
struct EvalRow {
  std::string condition;            // "clear", "fog_small", ...
  real map = 0;
  std::vector<real> per_class_ap;   // NaN where undefined
};

// Runs the detector over every sample of the split. An empty key evaluates
// the clear images; otherwise the named weather render.
DetectionSet collect_detections(Detector& det, const TripletDataset& ds,
                                const std::string& key);

EvalRow evaluate_condition(Detector& det, const TripletDataset& ds,
                           const std::string& key);

// Clear plus the target weather at small/medium/large intensity.
std::vector<EvalRow> intensity_sweep(Detector& det, const TripletDataset& ds);

void write_eval_csv(const std::vector<EvalRow>& rows,
                    const std::vector<std::string>& class_names,
                    const std::string& path);

// Feature-space diagnostics over the aligned triplets of a split:
// triplet distances, ordering rate, hard-example ranking, and a fixed-seed
// 2-d random projection of the per-domain features.
struct DiagnoseResult {
  real ordering = 0;  // fraction of samples with d(S,T) < d(S,A)
  std::string distances_csv;
  std::string hardness_csv;
  std::string projection_csv;
};

DiagnoseResult diagnose(Detector& det, const TripletDataset& ds,
                        const std::string& out_dir);

}  // namespace stormadapt
