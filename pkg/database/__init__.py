"""Run ledger database access"""
