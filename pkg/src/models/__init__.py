# Initialize models package 