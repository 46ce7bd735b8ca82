#pragma once

#include <stdexcept>
#include <string>

namespace photoshape {

// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(int line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Raised by substance-classifier plugins; carries the exemplar being classified.
class PluginError : public Error {
 public:
  PluginError(std::string exemplar_id, const std::string& what)
      : Error("classifier failed on '" + exemplar_id + "': " + what),
        exemplar_id_(std::move(exemplar_id)) {}
  const std::string& exemplar_id() const { return exemplar_id_; }

 private:
  std::string exemplar_id_;
};

}  // namespace photoshape
