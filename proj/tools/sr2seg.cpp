#include "sr2seg/cli.hpp"

int main(int argc, char** argv) {
  return sr2seg::cmd_dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
