#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>

#include "svq/pose/pose.hpp"

namespace svq {

// Malformed corpus input; what() names the line and field.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& field, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ", field '" + field + "': " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// One JSON object per line: {"id","text","fps","frames":[[[x,y(,z)] x V] x T]}.
// Coordinates are written with 17 significant digits so reading them back is exact.
void write_corpus(std::ostream& out, const Corpus& corpus);
void write_corpus(const std::string& path, const Corpus& corpus);
Corpus read_corpus(std::istream& in);
Corpus read_corpus(const std::string& path);

std::string format_double(double v);

}  // namespace svq
