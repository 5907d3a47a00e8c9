#include "clisa/splits.hpp"

#include <algorithm>
#include <set>

#include "clisa/rng.hpp"

namespace clisa {

void SplitPlan::validate() const {
  for (const auto& f : folds) {
    std::set<std::string> train(f.train_subjects.begin(), f.train_subjects.end());
    if (train.empty() || f.test_subjects.empty())
      throw config_error("split plan: empty train or test side");
    for (const auto& s : f.test_subjects)
      if (train.count(s))
        throw config_error("split plan: subject " + s + " appears in train and test");
  }
  if (spec.protocol == Protocol::generalize) {
    std::set<int> train(train_stimuli.begin(), train_stimuli.end());
    for (int s : test_stimuli)
      if (train.count(s))
        throw config_error("split plan: stimulus " + std::to_string(s) +
                           " appears in train and test trials");
  }
}

SplitPlan make_splits(const std::vector<std::string>& subject_ids,
                      const std::vector<int>& stimulus_ids, const SplitSpec& spec,
                      std::uint64_t seed) {
  const std::size_t n = subject_ids.size();
  SplitPlan plan;
  plan.spec = spec;

  const std::size_t k = spec.protocol == Protocol::loso ? n : spec.k;
  if (k < 2 || k > n)
    throw signal::param_error("make_splits: fold count " + std::to_string(k) +
                              " invalid for " + std::to_string(n) + " subjects");

  std::vector<std::string> order = subject_ids;
  Rng rng(derive_seed(seed, "fold-assignment"));
  rng.shuffle(order);

  // contiguous slices of the shuffled order; sizes differ by at most one
  std::vector<std::vector<std::string>> groups(k);
  for (std::size_t i = 0; i < n; ++i) groups[i % k].push_back(order[i]);

  for (std::size_t f = 0; f < k; ++f) {
    Fold fold;
    fold.test_subjects = groups[f];
    for (std::size_t o = 0; o < k; ++o)
      if (o != f)
        fold.train_subjects.insert(fold.train_subjects.end(), groups[o].begin(),
                                   groups[o].end());
    std::sort(fold.train_subjects.begin(), fold.train_subjects.end());
    std::sort(fold.test_subjects.begin(), fold.test_subjects.end());
    plan.folds.push_back(std::move(fold));
  }

  if (spec.protocol == Protocol::generalize) {
    if (stimulus_ids.size() < 2)
      throw signal::param_error("make_splits: generalize needs >= 2 stimuli");
    std::vector<int> stims = stimulus_ids;
    std::sort(stims.begin(), stims.end());
    stims.erase(std::unique(stims.begin(), stims.end()), stims.end());
    Rng srng(derive_seed(seed, "stimulus-partition"));
    srng.shuffle(stims);
    const auto n_train = static_cast<std::size_t>(
        std::llround(spec.train_trial_frac * static_cast<double>(stims.size())));
    if (n_train == 0 || n_train >= stims.size())
      throw signal::param_error("make_splits: degenerate stimulus partition");
    plan.train_stimuli.assign(stims.begin(), stims.begin() + static_cast<std::ptrdiff_t>(n_train));
    plan.test_stimuli.assign(stims.begin() + static_cast<std::ptrdiff_t>(n_train), stims.end());
    std::sort(plan.train_stimuli.begin(), plan.train_stimuli.end());
    std::sort(plan.test_stimuli.begin(), plan.test_stimuli.end());
  }

  plan.validate();
  return plan;
}

SplitPlan manual_split(const std::vector<std::string>& train_subjects,
                       const std::vector<std::string>& test_subjects) {
  SplitPlan plan;
  plan.spec.protocol = Protocol::kfold;
  plan.spec.k = 1;
  plan.folds.push_back({train_subjects, test_subjects});
  plan.validate();
  return plan;
}

}  // namespace clisa
