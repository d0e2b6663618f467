#include "smm/cli.hpp"

int main(int argc, char** argv) { return smm::cli::dispatch(argc, argv); }
