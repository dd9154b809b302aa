#pragma once

#include <map>
#include <string>
#include <vector>

namespace rqpipe {

struct CommandResult {
  int exit_code = 0;
  std::string out;
  std::string err;
};

// Runs `command` through /bin/sh and captures both output streams.
CommandResult run_command(const std::string& command);

// Single-quotes a value for safe interpolation into a shell command.
std::string shell_quote(const std::string& value);

// Names of the {placeholders} appearing in a template.
std::vector<std::string> template_placeholders(const std::string& tmpl);

// Replaces each {name} with values.at(name). Unknown placeholders are an error.
std::string expand_template(const std::string& tmpl, const std::map<std::string, std::string>& values);

}  // namespace rqpipe
