#pragma once

#include <map>
#include <string>

#include "pathtext/tensor.hpp"

namespace pathtext::ad {

// Binary tensor archive. Values are stored at the precision active when
// saved; loading converts back to the in-memory double buffers.
struct Checkpoint {
  std::string meta_json = "{}";
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pathtext::ad
