#pragma once

#include <istream>
#include <string>
#include <vector>

namespace tdce::csv {

// RFC 4180 style: fields containing ',', '"', CR or LF are quoted.
std::string escape(const std::string& field);
std::string join(const std::vector<std::string>& fields);

// Splits one logical record; quoted fields may span lines. Returns false at
// end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields);

// Shortest decimal that round-trips the double.
std::string format_double(double v);

}  // namespace tdce::csv
