// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/core/diag.hpp"

#include <cstdarg>
#include <cstdio>
#include <mutex>

namespace fluidctl::diag {

namespace {
std::mutex g_mutex;
Sink g_sink;
}  // namespace

void set_sink(Sink sink) {
  std::lock_guard<std::mutex> lock(g_mutex);
  g_sink = std::move(sink);
}

void warnf(const char* fmt, ...) {
  char buf[1024];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);

  std::lock_guard<std::mutex> lock(g_mutex);
  if (g_sink) {
    g_sink(buf);
  } else {
    std::fprintf(stderr, "[fluidctl] %s\n", buf);
  }
}

}  // namespace fluidctl::diag
