// Copyright (c) 2026 The kvsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace kvsim {

using ConvId = std::int64_t;
using ChunkId = std::int64_t;
using ReqId = std::int64_t;
using SlotId = std::int32_t;
using TokenCount = std::int64_t;

inline constexpr SlotId kInvalidSlot = -1;

enum class Tier { Device, Host };

} // namespace kvsim
