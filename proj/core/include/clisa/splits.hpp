#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clisa/sampler.hpp"

namespace clisa {

enum class Protocol { kfold, loso, generalize };

struct SplitSpec {
  Protocol protocol = Protocol::kfold;
  std::size_t k = 10;                  // kfold / generalize fold count
  double train_trial_frac = 2.0 / 3.0; // generalize: fraction of stimuli used in training
};

struct Fold {
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
};

/// Disjoint subject folds; for the generalize protocol additionally a disjoint
/// stimulus partition (training uses train_stimuli of train subjects, testing
/// uses test_stimuli of test subjects).
struct SplitPlan {
  SplitSpec spec;
  std::vector<Fold> folds;
  std::vector<int> train_stimuli;  // generalize only
  std::vector<int> test_stimuli;   // generalize only

  void validate() const;
};

/// Seeded random fold assignment. kfold balances fold sizes within one;
/// loso produces one singleton fold per subject.
SplitPlan make_splits(const std::vector<std::string>& subject_ids,
                      const std::vector<int>& stimulus_ids, const SplitSpec& spec,
                      std::uint64_t seed);

/// Single explicit train/test split (ablation and custom runs).
SplitPlan manual_split(const std::vector<std::string>& train_subjects,
                       const std::vector<std::string>& test_subjects);

}  // namespace clisa
