# Tests package 