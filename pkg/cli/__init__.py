"""crack-ensemble command line"""
