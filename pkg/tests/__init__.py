# Initialize tests package 