#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "caf/dataset.hpp"
#include "caf/fusion_model.hpp"
#include "caf/trainer.hpp"

namespace caf {

/// One row of an ablation table.
struct AblationCell {
  std::string cell_id;
  std::string head_label;         // CSV `head` column
  std::optional<HeadKind> head;   // nullopt: row kept for table shape but not run
  std::size_t conv_blocks = 2;
  bool batchnorm = true;
  Activation activation = Activation::swish;
  double data_ratio = 1.0;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/// Cartesian product over the listed axes; empty axes take the base value.
struct AblationGrid {
  std::vector<std::size_t> conv_blocks;
  std::vector<bool> batchnorm;
  std::vector<Activation> activation;
  std::vector<HeadKind> head;
  std::vector<double> data_ratio;
  std::vector<double> lr;

  std::vector<AblationCell> cells(const FusionConfig& base_model, const TrainConfig& base_train) const;
};

/// Table-shaped presets: table4 (fusion heads), table6 (component ablation),
/// table7 (pseudo-label data ratio), table8 (learning rate).
std::vector<AblationCell> preset_cells(const std::string& preset, const FusionConfig& base_model,
                                       const TrainConfig& base_train);
const std::vector<std::string>& preset_names();

struct AblationData {
  Dataset train;  // human + pseudo records
  Dataset test;   // clean held-out set; the noisy copy is derived from it
  std::map<std::string, double> noise_sigmas;
  std::uint64_t noise_seed = 0;
  RatioTarget ratio_target = RatioTarget::pseudo;
};

struct AblationRow {
  AblationCell cell;
  std::string status = "ok";  // ok | excluded | failed: <reason>
  double train_waf = 0.0;     // on the held-out validation split of the training data
  double train_acc = 0.0;
  double noise_waf = 0.0;     // on the perturbed test set
  double final_loss = 0.0;
  std::size_t epochs_run = 0;
  double wall_ms = 0.0;
  std::vector<EpochRecord> curve;

  bool ok() const { return status == "ok"; }
};

/// Trains one model per runnable cell; `jobs` > 1 runs cells on worker
/// threads. Failures are recorded per row and never abort the grid. Rows come
/// back in cell order.
std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const FusionConfig& base_model,
                                      const TrainConfig& base_train, const AblationData& data, std::size_t jobs = 1);

inline constexpr const char* kAblationCsvHeader =
    "cell_id,head,conv_blocks,batchnorm,activation,data_ratio,lr,seed,train_waf,train_acc,noise_waf,epochs_run,wall_ms";

/// Metric columns are percentages with two decimals; rows that did not run
/// carry `NA` metrics and their status in `epochs_run`.
std::string ablation_csv(const std::vector<AblationRow>& rows);
/// Fixed-width table for terminals.
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace caf
