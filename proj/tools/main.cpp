#include "csdn/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return csdn::run_cli({argv, argv + argc}, std::cout, std::cerr);
}
