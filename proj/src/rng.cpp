#include "tibp/rng.hpp"

#include <sstream>

#include "tibp/error.hpp"

namespace tibp {

std::string Rng::save_state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::load_state(const std::string& state) {
  std::istringstream is(state);
  std::mt19937_64 e;
  is >> e;
  if (is.fail()) fail(ErrorKind::format, "corrupt RNG state");
  engine_ = e;
}

}  // namespace tibp
