#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "caspgrid/config.hpp"
#include "caspgrid/data.hpp"
#include "caspgrid/metrics.hpp"

namespace caspgrid {

struct EvalReportRow {
  std::string method;       // "model" | "constant_velocity"
  std::string object_type;  // "all" or "type<i>"
  int k = 1;
  std::string metric;       // minADE | minFDE | MR | OR
  int horizon_steps = -1;   // -1 = full horizon
  double value = 0.0;
  int64_t count = 0;
};

struct EvalOutcome {
  std::vector<EvalReportRow> rows;
  std::vector<EvalRecord> model_records;
  std::vector<EvalRecord> cv_records;
  std::vector<DrivableContext> contexts;
  int64_t agents_evaluated = 0;
  int64_t parked_excluded = 0;
  int64_t extraction_fallbacks = 0;
};

/// Loads a checkpoint, runs eval-mode inference and trajectory extraction on
/// every agent of interest in the split, and aggregates the forecasting
/// metrics alongside the constant-velocity baseline.
EvalOutcome run_evaluation(const RunConfig& cfg, const std::string& dataset_dir,
                           const std::string& split, const std::string& checkpoint);

/// Metric rows from prepared records (exposed for tests and the baseline).
std::vector<EvalReportRow> aggregate_metrics(const std::vector<EvalRecord>& records,
                                             const std::vector<DrivableContext>& contexts,
                                             const EvalSettings& settings,
                                             const std::string& method, int num_future);

void write_eval_rows_ldjson(const std::vector<EvalReportRow>& rows, std::ostream& os);
void write_eval_rows_table(const std::vector<EvalReportRow>& rows, std::ostream& os);

}  // namespace caspgrid
