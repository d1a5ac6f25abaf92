#pragma once

#include <stdexcept>
#include <string>

namespace alm {

// Every failure the library reports. The message is a single line so the CLI
// can forward it unchanged.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace alm
