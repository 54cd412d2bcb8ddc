#include "aqdet/memtrack.hpp"

#include <stdexcept>

namespace aqdet::memtrack {

namespace {
bool g_active = false;
Stats g_stats;
}  // namespace

bool active() { return g_active; }

void begin() {
  if (g_active) throw std::logic_error("memtrack: measurement scope already active");
  g_stats = Stats{};
  g_active = true;
}

Stats end() {
  if (!g_active) throw std::logic_error("memtrack: no active measurement scope");
  g_active = false;
  return g_stats;
}

void on_alloc(std::size_t bytes) {
  if (!g_active) return;
  g_stats.live_bytes += bytes;
  g_stats.alloc_count += 1;
  if (g_stats.live_bytes > g_stats.peak_bytes) g_stats.peak_bytes = g_stats.live_bytes;
}

void on_free(std::size_t bytes) {
  if (!g_active) return;
  // Buffers created before the scope opened may be freed inside it.
  if (bytes > g_stats.live_bytes)
    g_stats.live_bytes = 0;
  else
    g_stats.live_bytes -= bytes;
}

}  // namespace aqdet::memtrack
