#ifndef OTMOTION_ERRORS_HPP
#define OTMOTION_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace otmotion {

/// Base of every exception thrown by the library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (bad shape, out-of-range parameter).
class invalid_argument_error : public error {
public:
    using error::error;
};

/// Numerical failure: kernel underflow, non-convergence, non-finite values.
/// `where` names the location (e.g. "block 2, frame 17") when known.
class numerical_error : public error {
public:
    explicit numerical_error(const std::string& what, std::string where = {})
        : error(where.empty() ? what : what + " (" + where + ")"), where_(std::move(where)) {}

    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

/// Malformed input file. `line` is 1-based; 0 when not tied to a line.
class parse_error : public error {
public:
    parse_error(const std::string& file, std::size_t line, const std::string& what)
        : error(file + (line ? ":" + std::to_string(line) : std::string{}) + ": " + what),
          file_(file), line_(line) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

} // namespace otmotion

#endif // OTMOTION_ERRORS_HPP
