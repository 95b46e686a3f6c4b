// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "orthomoe/adapter.hpp"

namespace orthomoe {

// Adapter container: "OMAD" magic, u32 format version, u64 JSON header
// length, JSON header, then named f64 tensors in row-major order.
// Field and tensor names are pinned in docs/format.md.
void save_adapter(const AdapterState& st, const std::string& path);
AdapterState load_adapter(const std::string& path);

}  // namespace orthomoe
