#pragma once

#include <cstdint>
#include <cstdlib>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace epc {

[[noreturn]] inline void fail_check(const std::string& msg) {
  throw std::invalid_argument(msg);
}

namespace detail {
inline void format_parts(std::ostringstream&) {}
template <class A, class... Rest>
void format_parts(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  format_parts(os, rest...);
}
}  // namespace detail

template <class... Parts>
std::string format_msg(const Parts&... parts) {
  std::ostringstream os;
  detail::format_parts(os, parts...);
  return os.str();
}

#define EPC_CHECK(cond, ...)                                   \
  do {                                                         \
    if (!(cond)) ::epc::fail_check(::epc::format_msg(__VA_ARGS__)); \
  } while (0)

/// Rectified stereo rig: metric baseline and focal length in pixels.
struct CameraRig {
  float baseline = 0.5f;
  float focal = 100.0f;
};

/// Dense single-channel H x W float map. Used for disparity, depth and
/// validity fields outside the differentiable tensor path.
struct Grid {
  int h = 0;
  int w = 0;
  std::vector<float> v;

  Grid() = default;
  Grid(int height, int width, float fill = 0.0f)
      : h(height), w(width), v(static_cast<size_t>(height) * width, fill) {}

  float& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  float at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
};

inline Grid hflip(const Grid& g) {
  Grid out(g.h, g.w);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) out.at(y, x) = g.at(y, g.w - 1 - x);
  return out;
}

inline bool env_flag(const char* name) {
  const char* s = std::getenv(name);
  return s != nullptr && s[0] != '\0' && s[0] != '0';
}

/// EPC_DETERMINISTIC=1 pins kernel scheduling to the fixed-partition path.
/// All built-in kernels already use fixed partitions, so this only exists
/// as an explicit contract switch for tests.
inline bool deterministic_mode() { return env_flag("EPC_DETERMINISTIC"); }

inline int env_int(const char* name, int fallback) {
  const char* s = std::getenv(name);
  if (s == nullptr || s[0] == '\0') return fallback;
  return std::atoi(s);
}

}  // namespace epc
