"""Network, pipeline, dataset and run-ledger schemas"""
