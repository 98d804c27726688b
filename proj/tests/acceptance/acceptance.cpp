// Acceptance suite: one checkable criterion per function, one pass/fail line
// per criterion on stdout. Returns nonzero if any selected criterion fails.

#include <cstring>
#include <iostream>

#include "criteria.hpp"

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc)
      only = std::atoi(argv[i + 1]);
  }

  using acceptance::Criterion;
  const std::vector<Criterion>& all = acceptance::criteria();
  int failures = 0;
  for (const Criterion& c : all) {
    if (only != 0 && c.number != only) continue;
    acceptance::Result r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << "C" << c.number << " "
              << c.name << ": " << r.detail << std::endl;
    if (!r.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
