#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "clisa/signal.hpp"
#include "clisa/tensor.hpp"

namespace clisa {

template <class Real>
struct Trial {
  int trial_id = 0;
  int stimulus_id = 0;
  int label = 0;
  Tensor<Real> signal;  // [M x T]
};

/// One subject's session: trials sharing channel count and sampling rate.
template <class Real>
struct Recording {
  std::string subject_id;
  double sampling_rate = 0;
  std::vector<std::string> channel_names;
  std::vector<Trial<Real>> trials;

  std::size_t channels() const { return channel_names.size(); }

  void validate() const {
    if (sampling_rate <= 0) throw data_error(subject_id + ": non-positive sampling rate");
    for (std::size_t i = 0; i < channel_names.size(); ++i)
      for (std::size_t j = i + 1; j < channel_names.size(); ++j)
        if (channel_names[i] == channel_names[j])
          throw data_error(subject_id + ": duplicate channel name " + channel_names[i]);
    for (const auto& t : trials) {
      if (t.signal.rank() != 2 || t.signal.dim(0) != channels())
        throw data_error(subject_id + ": trial " + std::to_string(t.trial_id) +
                         " channel count mismatch");
    }
  }
};

}  // namespace clisa
