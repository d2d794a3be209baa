# Initialize services package 