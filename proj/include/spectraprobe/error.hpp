#pragma once

#include <stdexcept>
#include <string>

namespace spectraprobe {

// Exit-code classes used by the command-line front end:
//   DataError / NumericalError -> 1, UsageError / IoError -> 2.

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spectraprobe
