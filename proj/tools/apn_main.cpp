#include "apn/cli.hpp"

int main(int argc, char** argv) { return apn::cli::run(argc, argv); }
