#pragma once

#include <cstddef>

namespace aqdet::memtrack {

// Byte accounting for tensor buffers. When a measurement scope is active,
// every tensor value/grad allocation reports here; peak tracks the high
// watermark of live bytes allocated inside the scope.
struct Stats {
  std::size_t peak_bytes = 0;
  std::size_t live_bytes = 0;
  std::size_t alloc_count = 0;
};

bool active();
void begin();
Stats end();

void on_alloc(std::size_t bytes);
void on_free(std::size_t bytes);

// RAII scope for one measurement. Only one may be active at a time.
class Scope {
 public:
  Scope() { begin(); }
  ~Scope() {
    if (!done_) end();
  }
  Stats finish() {
    done_ = true;
    return end();
  }

 private:
  bool done_ = false;
};

}  // namespace aqdet::memtrack
