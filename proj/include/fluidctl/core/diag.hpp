// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>

namespace fluidctl::diag {

using Sink = std::function<void(const std::string&)>;

//! Replaces the warning sink. Default prints "[fluidctl] msg" to stderr.
void set_sink(Sink sink);

//! printf-style warning. Never throws, never aborts.
void warnf(const char* fmt, ...);

}  // namespace fluidctl::diag
