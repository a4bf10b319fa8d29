#ifndef SCLVM_MODEL_IO_HPP
#define SCLVM_MODEL_IO_HPP

#include "sclvm/trainer.hpp"

#include <string>

namespace sclvm {

/// Self-describing JSON container, format tag "SCLVM1". Round-trips every
/// stored real bit-exactly.
void save_model(const TrainedModel& model, const std::string& path);
TrainedModel load_model(const std::string& path);

}  // namespace sclvm

#endif
